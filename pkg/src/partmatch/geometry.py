"""Triangle meshes, look-at pinhole projection, and ray-cast vertex visibility.

Coordinate conventions: the model sits at the origin (meshes are normalized so
the bounding-box center is the origin and the bounding-box diagonal is 1).
The camera sits on a sphere of radius ``distance`` around the origin at
(azimuth, elevation) degrees, looks at the origin, and projects with a pinhole
of focal length ``focal`` pixels.  Image x grows rightward, image y grows
downward, principal point at the image center.  World z is up; azimuth 0 puts
the camera on the +x axis and azimuth grows toward +y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Zero-area triangles are rejected below this cross-product norm.
DEGENERATE_AREA_TOL = 1e-12
# Self-intersection guard for visibility rays, relative to the mesh diagonal.
VISIBILITY_EPS_SCALE = 1e-6


class BehindCameraError(ValueError):
    """A point sits on or behind the camera plane."""


@dataclass(frozen=True)
class Viewpoint:
    """Camera pose: azimuth/elevation in degrees, distance in model units."""

    azimuth: float
    elevation: float
    distance: float
    focal: float
    image_size: tuple[int, int] = (224, 224)

    def __post_init__(self):
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "distance", float(self.distance))
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        if self.distance <= 0:
            raise ValueError("distance must be positive")
        if self.focal <= 0:
            raise ValueError("focal must be positive")

    def to_json_dict(self) -> dict:
        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "distance": self.distance,
            "focal": self.focal,
        }

    @classmethod
    def from_json_dict(cls, d: dict, image_size=(224, 224)) -> "Viewpoint":
        return cls(d["azimuth"], d["elevation"], d["distance"], d["focal"], image_size)


@dataclass
class Mesh3D:
    """Triangle mesh: (V, 3) float vertices and (T, 3) int vertex-index triples."""

    vertices: np.ndarray
    triangles: np.ndarray
    mesh_id: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.vertices) == 0:
            raise ValueError("mesh has no vertices")
        if self.triangles.size:
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
            areas = np.linalg.norm(np.cross(b - a, c - a), axis=1)
            if np.any(areas <= DEGENERATE_AREA_TOL):
                bad = int(np.argmin(areas))
                raise ValueError(f"degenerate triangle {bad} (area {areas[bad]:g})")

    @property
    def diagonal(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class ProjectedPart:
    """A part of the 3D model projected into an image."""

    part_id: int
    center: tuple[float, float]
    visible: bool


def camera_frame(vp: Viewpoint):
    """Camera origin plus unit right/down/forward axes for a viewpoint."""
    az = math.radians(vp.azimuth)
    el = math.radians(vp.elevation)
    origin = vp.distance * np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
    )
    forward = -origin / np.linalg.norm(origin)
    up_ref = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up_ref)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        # Looking straight up/down: fall back to an azimuth-locked reference
        # so the frame stays deterministic and azimuth-equivariant.
        up_ref = np.array([math.cos(az), math.sin(az), 0.0])
        right = np.cross(forward, up_ref)
        norm = np.linalg.norm(right)
    right = right / norm
    down = np.cross(forward, right)
    return origin, right, down, forward


def project_points(points: np.ndarray, vp: Viewpoint):
    """Project (N, 3) world points; returns (N, 2) pixels and (N,) depths.

    Depth is the distance along the camera's forward axis; points with
    depth <= 0 are behind the camera and get NaN pixel coordinates.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    origin, right, down, forward = camera_frame(vp)
    rel = pts - origin
    depth = rel @ forward
    w, h = vp.image_size
    with np.errstate(divide="ignore", invalid="ignore"):
        x = w / 2.0 + vp.focal * (rel @ right) / depth
        y = h / 2.0 + vp.focal * (rel @ down) / depth
    px = np.stack([x, y], axis=1)
    px[depth <= 0.0] = np.nan
    return px, depth


def project_vertex(point, vp: Viewpoint) -> tuple[float, float]:
    """Project one world point to pixel coordinates.

    Raises BehindCameraError if the point is on or behind the camera plane.
    """
    px, depth = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), vp)
    if depth[0] <= 0.0:
        raise BehindCameraError(f"point {tuple(np.asarray(point, float))} behind camera")
    return float(px[0, 0]), float(px[0, 1])


def _ray_hits(mesh: Mesh3D, origin: np.ndarray, direction: np.ndarray, eps: float) -> bool:
    """True if segment origin -> origin+direction hits any triangle strictly
    before its far end (within eps of the endpoint does not count)."""
    tri = mesh.vertices[mesh.triangles]
    a = tri[:, 0]
    e1 = tri[:, 1] - a
    e2 = tri[:, 2] - a
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-14
    if not ok.any():
        return False
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = origin - a
    u = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    v = np.dot(q, direction) * inv
    t = np.einsum("ij,ij->i", q, e2) * inv
    seg_len = np.linalg.norm(direction)
    t_hi = 1.0 - eps / seg_len
    t_lo = eps / seg_len
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_lo) & (t < t_hi)
    return bool(hit.any())


def visible_vertices(mesh: Mesh3D, vp: Viewpoint) -> np.ndarray:
    """Boolean mask over mesh vertices: not self-occluded and in front of camera."""
    origin, _, _, forward = camera_frame(vp)
    eps = VISIBILITY_EPS_SCALE * mesh.diagonal
    rel = mesh.vertices - origin
    depth = rel @ forward
    out = np.zeros(len(mesh.vertices), dtype=bool)
    for i in range(len(mesh.vertices)):
        if depth[i] <= 0.0:
            continue
        out[i] = not _ray_hits(mesh, origin, rel[i], eps)
    return out


def is_visible(vertex_index: int, mesh: Mesh3D, vp: Viewpoint) -> bool:
    """True iff the camera sees the vertex past no intervening triangle."""
    if not 0 <= vertex_index < len(mesh.vertices):
        raise IndexError(f"vertex index {vertex_index} out of range")
    origin, _, _, forward = camera_frame(vp)
    rel = mesh.vertices[vertex_index] - origin
    if rel @ forward <= 0.0:
        return False
    eps = VISIBILITY_EPS_SCALE * mesh.diagonal
    return not _ray_hits(mesh, origin, rel, eps)


def render_part_projections(model, mesh: Mesh3D, vp: Viewpoint) -> list[ProjectedPart]:
    """Project every part of a PartModel3D; invisible or behind-camera parts
    are returned with visible=False and a NaN-free placeholder center."""
    out = []
    vis = visible_vertices(mesh, vp)
    px, depth = project_points(mesh.vertices, vp)
    for part in model.parts:
        if not 0 <= part.vertex < len(mesh.vertices):
            raise IndexError(f"part vertex {part.vertex} out of range")
        if depth[part.vertex] <= 0.0:
            out.append(ProjectedPart(part.part_id, (0.0, 0.0), False))
            continue
        center = (float(px[part.vertex, 0]), float(px[part.vertex, 1]))
        out.append(ProjectedPart(part.part_id, center, bool(vis[part.vertex])))
    return out


def normalize_mesh(mesh: Mesh3D) -> Mesh3D:
    """Center the bounding box at the origin and scale its diagonal to 1."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0:
        raise ValueError("mesh has zero extent")
    verts = (mesh.vertices - (lo + hi) / 2.0) / diag
    return Mesh3D(verts, mesh.triangles.copy(), mesh.mesh_id)


def load_obj(path) -> Mesh3D:
    """Read the minimal OBJ subset: v/f lines, 1-based indices, rest ignored.

    Faces with more than three indices are fan-triangulated.
    """
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{ln}: malformed vertex line")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                if len(idx) < 3:
                    raise ValueError(f"{path}:{ln}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    import os

    return Mesh3D(np.array(verts), np.array(tris, dtype=np.int64),
                  mesh_id=os.path.splitext(os.path.basename(str(path)))[0])


def save_obj(mesh: Mesh3D, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    data = "\n".join(lines) + "\n"
    from .io_utils import write_text_atomic

    write_text_atomic(path, data)
