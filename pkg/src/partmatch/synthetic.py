"""Synthetic benchmark scenes: a procedural vehicle-proxy mesh with named
part vertices, plus a deterministic feature emitter whose grids carry known
ground-truth correspondences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Mesh3D, Viewpoint, normalize_mesh, project_points, save_obj, visible_vertices
from .grid import FeatureGrid, GridMeta, PartAnnotation, write_annotations, write_grid
from .io_utils import write_json_atomic

PART_NAMES = (
    "wheel_fl", "wheel_fr", "wheel_rl", "wheel_rr",
    "light_l", "light_r", "mirror_l", "mirror_r",
)

TEMPLATES = {
    # (length y, width x, height z), lattice subdivisions (nx, ny, nz)
    "box-car": ((4.5, 1.8, 1.5), (2, 4, 2)),
    "box-bike": ((1.9, 0.5, 1.2), (2, 4, 2)),
}

DEFAULT_IMAGE_SIZE = (224, 224)
DEFAULT_DISTANCE = 3.0
DEFAULT_FOCAL = 480.0
DEFAULT_PART_BOX = 32.0


def _box_lattice_mesh(dims, subdiv) -> tuple[Mesh3D, dict[tuple[int, int, int], int]]:
    """Closed box surface subdivided into a lattice; returns the mesh and a
    lattice-coordinate -> vertex-index map."""
    L, W, H = dims
    nx, ny, nz = subdiv
    coord = {}
    verts = []

    def vertex(i, j, k):
        key = (i, j, k)
        if key not in coord:
            coord[key] = len(verts)
            verts.append([
                -W / 2 + W * i / nx,
                -L / 2 + L * j / ny,
                -H / 2 + H * k / nz,
            ])
        return coord[key]

    tris = []

    def quad(a, b, c, d):
        tris.append((a, b, c))
        tris.append((a, c, d))

    for j in range(ny):
        for k in range(nz):
            quad(vertex(0, j, k), vertex(0, j + 1, k), vertex(0, j + 1, k + 1), vertex(0, j, k + 1))
            quad(vertex(nx, j, k), vertex(nx, j, k + 1), vertex(nx, j + 1, k + 1), vertex(nx, j + 1, k))
    for i in range(nx):
        for k in range(nz):
            quad(vertex(i, 0, k), vertex(i, 0, k + 1), vertex(i + 1, 0, k + 1), vertex(i + 1, 0, k))
            quad(vertex(i, ny, k), vertex(i + 1, ny, k), vertex(i + 1, ny, k + 1), vertex(i, ny, k + 1))
    for i in range(nx):
        for j in range(ny):
            quad(vertex(i, j, 0), vertex(i + 1, j, 0), vertex(i + 1, j + 1, 0), vertex(i, j + 1, 0))
            quad(vertex(i, j, nz), vertex(i, j + 1, nz), vertex(i + 1, j + 1, nz), vertex(i + 1, j, nz))
    return Mesh3D(np.array(verts), np.array(tris, dtype=np.int64)), coord


def make_proxy_mesh(template: str = "box-car", dims=None):
    """Build a watertight proxy mesh with 8 designated part vertices.

    Returns (mesh, parts) where parts is a list of (part_id, vertex index)
    ordered as PART_NAMES.  The mesh is normalized: bounding-box center at
    the origin, diagonal 1.
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r} (have {sorted(TEMPLATES)})")
    default_dims, subdiv = TEMPLATES[template]
    dims = tuple(float(v) for v in (dims or default_dims))
    if min(dims) <= 0:
        raise ValueError(f"degenerate dimensions {dims}")
    mesh, coord = _box_lattice_mesh(dims, subdiv)
    nx, ny, nz = subdiv
    # Lattice positions: wheels on the bottom side edges, lights on the
    # front face, mirrors near the top front corners.
    lattice_parts = [
        (0, 3, 0),   # wheel_fl (left side, toward front)
        (nx, 3, 0),  # wheel_fr
        (0, 1, 0),   # wheel_rl
        (nx, 1, 0),  # wheel_rr
        (0, ny, 1),  # light_l
        (nx, ny, 1),  # light_r
        (0, ny - 1, nz),  # mirror_l
        (nx, ny - 1, nz),  # mirror_r
    ]
    parts = [(pid, coord[key]) for pid, key in enumerate(lattice_parts)]
    mesh = normalize_mesh(mesh)
    mesh.mesh_id = template
    return mesh, parts


@dataclass
class SyntheticScene:
    """A proxy mesh plus a fixed per-vertex descriptor table."""

    mesh: Mesh3D
    parts: list[tuple[int, int]]
    descriptors: np.ndarray  # (V, dim) unit rows
    seed: int
    template: str = "box-car"
    dim: int = 64
    coarse_stride: int = 16
    fine_stride: int = 8
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE
    ref_distance: float = DEFAULT_DISTANCE
    ref_elevation: float = 0.0
    focal: float = DEFAULT_FOCAL
    part_box: float = DEFAULT_PART_BOX

    def grid_shape(self, level: str) -> tuple[int, int, int]:
        stride = self.coarse_stride if level == "coarse" else self.fine_stride
        return self.image_size[1] // stride, self.image_size[0] // stride, stride

    def viewpoint(self, azimuth: float, elevation: float | None = None) -> Viewpoint:
        el = self.ref_elevation if elevation is None else elevation
        return Viewpoint(azimuth, el, self.ref_distance, self.focal, self.image_size)


def make_scene(template: str = "box-car", seed: int = 42, dim: int = 64, **kwargs) -> SyntheticScene:
    mesh, parts = make_proxy_mesh(template)
    rng = np.random.default_rng((seed, 101))
    table = rng.standard_normal((len(mesh.vertices), dim))
    table /= np.linalg.norm(table, axis=1, keepdims=True)
    return SyntheticScene(mesh, parts, table, seed, template, dim, **kwargs)


def synth_feature_grid(scene: SyntheticScene, vp: Viewpoint, sigma: float = 0.0,
                       seed: int = 0, level: str = "coarse", image_id: str = ""):
    """Emit a grid for the scene under a viewpoint.

    Every visible vertex splats its descriptor into the cell containing its
    projection (the vertex projecting nearest the cell center wins
    collisions, ties to the lowest index); other cells get seeded background
    unit vectors; Gaussian noise sigma is added and rows re-normalized.

    Returns (grid, correspondences, annotations): correspondences maps cell
    (i, j) -> (vertex index, exact projected pixel); annotations are
    fixed-size boxes on the visible part vertices.
    """
    seed_key = tuple(int(s) for s in seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    rows, cols, stride = scene.grid_shape(level)
    vis = visible_vertices(scene.mesh, vp)
    px, _ = project_points(scene.mesh.vertices, vp)
    winners: dict[tuple[int, int], tuple[float, int]] = {}
    for v in np.nonzero(vis)[0]:
        x, y = px[v]
        i, j = int(y // stride), int(x // stride)
        if not (0 <= i < rows and 0 <= j < cols):
            continue
        center = (stride * j + stride / 2.0, stride * i + stride / 2.0)
        d = math.hypot(x - center[0], y - center[1])
        cur = winners.get((i, j))
        if cur is None or (d, int(v)) < cur:
            winners[(i, j)] = (d, int(v))

    rng_bg = np.random.default_rng((scene.seed, *seed_key, 7, 0 if level == "coarse" else 1))
    data = rng_bg.standard_normal((rows, cols, scene.dim))
    data /= np.linalg.norm(data, axis=2, keepdims=True)
    correspondences = {}
    for (i, j), (_, v) in sorted(winners.items()):
        data[i, j] = scene.descriptors[v]
        correspondences[(i, j)] = (v, (float(px[v, 0]), float(px[v, 1])))
    if sigma > 0:
        rng_noise = np.random.default_rng((scene.seed, *seed_key, 11, 0 if level == "coarse" else 1))
        data = data + sigma * rng_noise.standard_normal(data.shape)
    data /= np.linalg.norm(data, axis=2, keepdims=True)

    annotations = []
    half = scene.part_box / 2.0
    for pid, v in scene.parts:
        if vis[v]:
            cx, cy = float(px[v, 0]), float(px[v, 1])
            annotations.append(PartAnnotation(pid, (cx - half, cy - half, cx + half, cy + half)))
    meta = GridMeta(image_id, scene.image_size[0], scene.image_size[1], vp)
    grid = FeatureGrid(rows, cols, scene.dim, float(stride), data.astype(np.float32), meta)
    return grid, correspondences, annotations


class SceneReference:
    """Clean reference grids for a scene, cached per viewpoint."""

    def __init__(self, scene: SyntheticScene, with_fine: bool = True):
        self.scene = scene
        self.with_fine = with_fine
        self._cache: dict = {}

    def __call__(self, vp: Viewpoint):
        key = (round(vp.azimuth, 6), round(vp.elevation, 6), round(vp.distance, 9))
        if key not in self._cache:
            image_id = f"ref_a{key[0]:g}_e{key[1]:g}"
            coarse, _, _ = synth_feature_grid(self.scene, vp, 0.0, 0, "coarse", image_id)
            fine = None
            if self.with_fine:
                fine, _, _ = synth_feature_grid(self.scene, vp, 0.0, 0, "fine", image_id)
            self._cache[key] = (coarse, fine)
        return self._cache[key]

    def azimuth_source(self, elevation: float | None = None, level: str = "coarse"):
        """Adapter for predict_viewpoint: azimuth -> (grid, fine, Viewpoint).

        level="coarse" serves coarse grids with fine refinement grids;
        level="fine" serves the fine grids directly (no refinement pair).
        """

        def source(azimuth: float):
            vp = self.scene.viewpoint(azimuth, elevation)
            coarse, fine = self(vp)
            if level == "fine":
                if fine is None:
                    raise ValueError("reference has no fine grids")
                return fine, None, vp
            return coarse, fine, vp

        return source


def synth_dataset(scene: SyntheticScene, n_train_per_bin: int, n_test_per_bin: int,
                  out_dir, bins=None, sigma: float = 0.05, seed: int = 42,
                  test_elevation: float | None = None, jitter: float = 10.0) -> dict:
    """Write a training/testing corpus: per image a coarse FGRD, a fine FGRD,
    and an annotation JSON; plus the proxy mesh and a manifest.  Azimuths
    jitter uniformly within +-jitter degrees of each bin center."""
    bins = list(bins) if bins is not None else [float(a) for a in range(0, 360, 45)]
    if not bins:
        raise ValueError("bins must be non-empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_obj(scene.mesh, out / "mesh.obj")
    splits: dict[str, list[str]] = {"train": [], "test": []}
    for split, per_bin, elevation in (
        ("train", n_train_per_bin, None),
        ("test", n_test_per_bin, test_elevation),
    ):
        idx = 0
        for b, center in enumerate(bins):
            for _ in range(per_bin):
                image_id = f"{split}_{idx:03d}"
                rng = np.random.default_rng((seed, 0 if split == "train" else 1, idx))
                az = (center + rng.uniform(-jitter, jitter)) % 360.0
                vp = scene.viewpoint(az, elevation)
                img_seed = (seed, 2 if split == "train" else 3, idx)
                coarse, _, annos = synth_feature_grid(scene, vp, sigma, img_seed, "coarse", image_id)
                fine, _, _ = synth_feature_grid(scene, vp, sigma, img_seed, "fine", image_id)
                write_grid(coarse, out / f"{image_id}.fgrd")
                write_grid(fine, out / f"{image_id}.fine.fgrd")
                write_annotations(annos, out / f"{image_id}.anns.json")
                splits[split].append(image_id)
                idx += 1
    manifest = {
        "format_version": 1,
        "template": scene.template,
        "scene_seed": scene.seed,
        "dim": scene.dim,
        "sigma": sigma,
        "bins": bins,
        "jitter": jitter,
        "image_size": list(scene.image_size),
        "part_names": list(PART_NAMES),
        "part_box": scene.part_box,
        "strides": {"coarse": scene.coarse_stride, "fine": scene.fine_stride},
        "reference": {
            "distance": scene.ref_distance,
            "elevation": scene.ref_elevation,
            "focal": scene.focal,
        },
        "test_elevation": test_elevation,
        "mesh_file": "mesh.obj",
        "splits": splits,
    }
    write_json_atomic(out / "manifest.json", manifest)
    return manifest


def scene_from_manifest(manifest: dict) -> SyntheticScene:
    """Rebuild the scene a corpus was generated from."""
    return make_scene(
        manifest["template"],
        int(manifest["scene_seed"]),
        int(manifest["dim"]),
        image_size=tuple(manifest["image_size"]),
        ref_distance=float(manifest["reference"]["distance"]),
        ref_elevation=float(manifest["reference"]["elevation"]),
        focal=float(manifest["reference"]["focal"]),
        part_box=float(manifest.get("part_box", DEFAULT_PART_BOX)),
        coarse_stride=int(manifest["strides"]["coarse"]),
        fine_stride=int(manifest["strides"]["fine"]),
    )
