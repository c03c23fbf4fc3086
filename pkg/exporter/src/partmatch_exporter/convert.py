"""Convert external annotation records to the toolkit's JSON formats.

The source is a JSON array of records {image_id, azimuth, elevation?,
parts: [{name, box: [x0, y0, x1, y1]}]}.  A part catalog maps names to part
IDs, aliases sub-part names onto canonical ones (e.g. the wheel center), and
drops names that should not be emitted (e.g. the eight wheel-rim sub-parts).
Azimuths are additionally quantized to the 8 standard bins.
"""

from __future__ import annotations

import json
from pathlib import Path

AZIMUTH_BINS = tuple(float(a) for a in range(0, 360, 45))


class ConvertError(ValueError):
    pass


def bin_azimuth(azimuth: float) -> float:
    """Nearest bin center among {0, 45, ..., 315} (circular)."""
    azimuth = float(azimuth) % 360.0
    return min(AZIMUTH_BINS,
               key=lambda c: (abs((azimuth - c + 180.0) % 360.0 - 180.0), c))


def load_catalog(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        catalog = json.load(fh)
    if "parts" not in catalog or not isinstance(catalog["parts"], dict):
        raise ConvertError(f"{path}: catalog needs a 'parts' name->id mapping")
    catalog.setdefault("aliases", {})
    catalog.setdefault("drop", [])
    return catalog


def convert_records(records, catalog) -> tuple[dict, dict]:
    """Returns (annotations by image_id, viewpoint metadata by image_id)."""
    parts = catalog["parts"]
    aliases = catalog["aliases"]
    drop = set(catalog["drop"])
    annotations: dict[str, list] = {}
    viewpoints: dict[str, dict] = {}
    for k, rec in enumerate(records):
        where = f"record {k}"
        if not isinstance(rec, dict) or "image_id" not in rec:
            raise ConvertError(f"{where}: missing image_id")
        where = f"record {k} ({rec['image_id']})"
        if "azimuth" not in rec or "parts" not in rec:
            raise ConvertError(f"{where}: missing azimuth or parts")
        annos = []
        for part in rec["parts"]:
            name = part.get("name")
            if name in drop:
                continue
            name = aliases.get(name, name)
            if name not in parts:
                raise ConvertError(f"{where}: unknown part name {name!r}")
            box = part.get("box")
            if (not isinstance(box, (list, tuple)) or len(box) != 4
                    or not box[0] < box[2] or not box[1] < box[3]):
                raise ConvertError(f"{where}: malformed box {box!r} for {name!r}")
            annos.append({"part_id": int(parts[name]), "box": [float(v) for v in box]})
        annotations[rec["image_id"]] = annos
        viewpoints[rec["image_id"]] = {
            "azimuth": float(rec["azimuth"]) % 360.0,
            "azimuth_bin": bin_azimuth(rec["azimuth"]),
            "elevation": float(rec.get("elevation", 0.0)),
        }
    return annotations, viewpoints


def convert_annotations(src_path, catalog_path, out_dir) -> list[Path]:
    """Write {image_id}.anns.json per record plus a viewpoints.json map."""
    with open(src_path, "r", encoding="utf-8") as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ConvertError(f"{src_path}: expected a JSON array of records")
    catalog = load_catalog(catalog_path)
    annotations, viewpoints = convert_records(records, catalog)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for image_id in sorted(annotations):
        path = out / f"{image_id}.anns.json"
        path.write_text(json.dumps(annotations[image_id], sort_keys=True, indent=2) + "\n")
        written.append(path)
    vp_path = out / "viewpoints.json"
    vp_path.write_text(json.dumps(viewpoints, sort_keys=True, indent=2) + "\n")
    written.append(vp_path)
    return written
