"""Command-line pipeline driver: synth, train, match, predict-viewpoint,
detect, and eval.

All randomness flows from --seed, outputs are written atomically, and
identical inputs plus an identical seed reproduce byte-identical files.
PARTMATCH_LOG selects the logging level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .detection import detect
from .evaluation import evaluate, format_report_table, occlude_grid
from .geometry import load_obj
from .grid import read_annotations, read_grid
from .io_utils import dump_json, write_json_atomic, write_text_atomic
from .matching import MatchConfig, match_images, write_matchset
from .overlay import emit_overlay_svg
from .part_model import ConsistencyConfig, TrainingSample, read_model, train, write_model
from .synthetic import SceneReference, make_scene, scene_from_manifest, synth_dataset
from .transfer import DEFAULT_NEIGHBORS
from .viewpoint import NoViewpointError, ViewpointEnergyConfig, predict_viewpoint

log = logging.getLogger("partmatch")


class CliError(RuntimeError):
    pass


def _load_manifest(corpus: Path) -> dict:
    path = corpus / "manifest.json"
    if not path.exists():
        raise CliError(f"missing manifest: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("template", "scene_seed", "splits"):
        if key not in manifest:
            raise CliError(f"{path}: missing field {key!r}")
    return manifest


def _load_split(corpus: Path, manifest: dict, split: str):
    if split not in manifest["splits"]:
        raise CliError(f"unknown split {split!r}")
    out = []
    for image_id in manifest["splits"][split]:
        coarse = read_grid(corpus / f"{image_id}.fgrd")
        fine_path = corpus / f"{image_id}.fine.fgrd"
        fine = read_grid(fine_path) if fine_path.exists() else None
        annos = read_annotations(corpus / f"{image_id}.anns.json")
        out.append((image_id, coarse, fine, annos))
    return out


def _match_config(args) -> MatchConfig:
    return MatchConfig(xi=args.xi, zeta=args.zeta, max_candidates=args.max_candidates)


def _add_match_flags(p, zeta_default: float | None = 32.0):
    p.add_argument("--xi", type=float, default=0.9, help="appearance distance threshold")
    p.add_argument("--zeta", type=float, default=zeta_default, help="displacement threshold (px)")
    p.add_argument("--max-candidates", type=int, default=300)
    p.add_argument("--k", type=int, default=DEFAULT_NEIGHBORS, help="transfer neighbors")


def cmd_synth(args) -> int:
    scene = make_scene(args.template, seed=args.seed)
    synth_dataset(
        scene, args.per_bin, args.test_per_bin, args.out,
        sigma=args.sigma, seed=args.seed, test_elevation=args.test_elevation,
    )
    log.info("wrote corpus to %s", args.out)
    return 0


def cmd_train(args) -> int:
    corpus = Path(args.corpus)
    manifest = _load_manifest(corpus)
    scene = scene_from_manifest(manifest)
    if args.mesh:
        mesh = load_obj(args.mesh)
        if len(mesh.vertices) != len(scene.mesh.vertices):
            raise CliError(
                f"{args.mesh}: {len(mesh.vertices)} vertices, but the corpus scene "
                f"has {len(scene.mesh.vertices)}; per-vertex descriptors would misalign"
            )
        scene.mesh = mesh
    samples = [
        TrainingSample(grid, annos, fine)
        for _, grid, fine, annos in _load_split(corpus, manifest, args.split)
    ]
    cfg = ConsistencyConfig(clusters_per_part=args.clusters, min_support=args.min_support)
    model = train(samples, scene.mesh, SceneReference(scene), _match_config(args), cfg,
                  k_neighbors=args.k, seed=args.seed)
    write_model(model, args.out)
    log.info("wrote model with %d parts to %s", len(model.parts), args.out)
    return 0


def cmd_match(args) -> int:
    a = read_grid(args.a)
    b = read_grid(args.b)
    fine_a = read_grid(args.fine_a) if args.fine_a else None
    fine_b = read_grid(args.fine_b) if args.fine_b else None
    m = match_images(a, b, fine_a, fine_b, _match_config(args))
    if args.out == "-":
        sys.stdout.write(dump_json(m.to_json_dict()))
    else:
        write_matchset(m, args.out)
    if args.svg:
        lines = [(p.src_px, p.dst_px) for p in m.pairs]
        svg = emit_overlay_svg(
            (a.meta.width or a.stride * a.cols, a.meta.height or a.stride * a.rows),
            (b.meta.width or b.stride * b.cols, b.meta.height or b.stride * b.rows),
            lines,
        )
        write_text_atomic(args.svg, svg)
    return 0


def cmd_predict_viewpoint(args) -> int:
    corpus = Path(args.corpus)
    manifest = _load_manifest(corpus)
    scene = scene_from_manifest(manifest)
    test = read_grid(args.test)
    fine = read_grid(args.fine) if args.fine else None
    source = SceneReference(scene).azimuth_source()
    if args.zeta is not None:
        match_cfg = _match_config(args)
    else:
        match_cfg = MatchConfig(xi=args.xi, zeta=float(test.stride),
                                max_candidates=args.max_candidates)
    try:
        pred = predict_viewpoint(test, source, ViewpointEnergyConfig(), match_cfg, fine)
    except NoViewpointError as exc:
        raise CliError(str(exc)) from exc
    payload = {
        "azimuth": pred.azimuth,
        "coarse_azimuth": pred.coarse_azimuth,
        "energies": [
            {"azimuth": az, "energy": (None if math.isinf(e) else e)}
            for az, e in pred.energies
        ],
    }
    write_json_atomic(args.out, payload)
    return 0


def cmd_detect(args) -> int:
    corpus = Path(args.corpus)
    manifest = _load_manifest(corpus)
    scene = scene_from_manifest(manifest)
    model = read_model(args.model)
    provider = SceneReference(scene)
    images = _load_split(corpus, manifest, args.split)
    match_cfg = _match_config(args)

    def run_one(item):
        image_id, grid, fine, _ = item
        if args.occlude != "L0":
            grid = occlude_grid(grid, args.occlude, args.seed)
            fine = occlude_grid(fine, args.occlude, args.seed) if fine is not None else None
        vp = None
        source = None
        if args.viewpoint == "given":
            if grid.meta.viewpoint is None:
                raise CliError(f"{image_id}: no ground-truth viewpoint in metadata")
            vp = grid.meta.viewpoint
        else:
            source = provider.azimuth_source(level="fine" if fine is not None else "coarse")
        dets = detect(grid, model, scene.mesh, provider, vp, fine, match_cfg,
                      k_neighbors=args.k, azimuth_source=source)
        return image_id, grid, dets

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, images))
    else:
        results = [run_one(item) for item in images]

    payload = [
        {"image_id": image_id, "part_id": d.part_id, "box": list(d.box), "score": d.score}
        for image_id, _, dets in results
        for d in dets
    ]
    if args.out == "-":
        sys.stdout.write(dump_json(payload))
    else:
        write_json_atomic(args.out, payload)
    if args.svg_dir:
        svg_dir = Path(args.svg_dir)
        svg_dir.mkdir(parents=True, exist_ok=True)
        gt = {image_id: annos for image_id, _, _, annos in images}
        for image_id, grid, dets in results:
            size = (grid.meta.width or grid.stride * grid.cols,
                    grid.meta.height or grid.stride * grid.rows)
            svg = emit_overlay_svg(size, size, (),
                                   [d.box for d in dets],
                                   [a.box for a in gt[image_id]])
            write_text_atomic(svg_dir / f"{image_id}.svg", svg)
    return 0


def cmd_eval(args) -> int:
    corpus = Path(args.corpus)
    manifest = _load_manifest(corpus)
    gts = {
        image_id: annos
        for image_id, _, _, annos in _load_split(corpus, manifest, args.split)
    }
    if len(args.dets) != len(args.level):
        raise CliError("--dets and --level must be given the same number of times")

    class _Det:
        __slots__ = ("part_id", "box", "score")

        def __init__(self, rec):
            self.part_id = int(rec["part_id"])
            self.box = tuple(rec["box"])
            self.score = float(rec["score"])

    reports = []
    for dets_path, level in zip(args.dets, args.level):
        if dets_path == "-":
            raw = json.load(sys.stdin)
        else:
            with open(dets_path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        dets_per_image: dict[str, list] = {image_id: [] for image_id in gts}
        for rec in raw:
            dets_per_image.setdefault(rec["image_id"], []).append(_Det(rec))
        reports.append(evaluate(dets_per_image, gts, args.iou, level))
    payload = [r.to_json_dict() for r in reports]
    write_json_atomic(args.out, payload[0] if len(payload) == 1 else payload)
    table = format_report_table(reports, [args.label] * len(reports))
    if args.table:
        write_text_atomic(args.table, table)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partmatch", description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--jobs", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--template", default="box-car")
    p.add_argument("--per-bin", type=int, default=2)
    p.add_argument("--test-per-bin", type=int, default=4)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--test-elevation", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn the 3D part model from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mesh", default=None, help="override mesh OBJ (defaults to corpus mesh)")
    p.add_argument("--split", default="train")
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--min-support", type=int, default=2)
    p.add_argument("--out", required=True)
    _add_match_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="match two feature grids")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--fine-a", default=None)
    p.add_argument("--fine-b", default=None)
    p.add_argument("--out", default="-", help="match-set JSON path, - for stdout")
    p.add_argument("--svg", default=None)
    _add_match_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("predict-viewpoint", help="coarse-to-fine azimuth search")
    p.add_argument("--test", required=True)
    p.add_argument("--fine", default=None)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_match_flags(p, zeta_default=None)
    p.set_defaults(func=cmd_predict_viewpoint)

    p = sub.add_parser("detect", help="detect parts on a corpus split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--viewpoint", choices=["given", "predict"], default="given")
    p.add_argument("--occlude", choices=["L0", "L1", "L2", "L3"], default="L0")
    p.add_argument("--out", required=True, help="detections JSON path, - for stdout")
    p.add_argument("--svg-dir", default=None)
    _add_match_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--dets", action="append", required=True,
                   help="detections JSON path, - for stdin (repeatable)")
    p.add_argument("--level", action="append", default=None,
                   help="occlusion level tag per --dets (default L0)")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--label", default="partmatch")
    p.add_argument("--out", required=True)
    p.add_argument("--table", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("PARTMATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "level", None) is None and args.command == "eval":
        args.level = ["L0"] * len(args.dets)
    try:
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError, RuntimeError, KeyError) as exc:
        print(f"partmatch {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
