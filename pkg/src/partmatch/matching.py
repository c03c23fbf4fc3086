"""Geometric-consistency matching between two feature grids.

Pipeline: threshold appearance distances (xi) to get candidate cell pairs,
connect candidates whose relative displacements agree within zeta, and take
the maximum clique of that graph as the match set.  An optional fine grid
pair re-localizes matched coordinates at half the stride.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import FeatureGrid, cell_center
from .io_utils import write_json_atomic


@dataclass(frozen=True)
class MatchConfig:
    """Thresholds for the matcher plus weights for the diagnostic loss."""

    xi: float = 0.9
    zeta: float = 32.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    max_candidates: int = 300

    def __post_init__(self):
        # xi == 0 is admitted as the degenerate "identical descriptors only" case.
        if not 0.0 <= self.xi <= 2.0:
            raise ValueError("xi must be in [0, 2]")
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")


@dataclass(frozen=True)
class MatchPair:
    """One matched cell pair with pixel coordinates (possibly refined)."""

    src: tuple[int, int]
    dst: tuple[int, int]
    src_px: tuple[float, float]
    dst_px: tuple[float, float]
    dist: float


@dataclass
class MatchSet:
    """One-to-one cell pairing between a source and a target grid."""

    source_id: str
    target_id: str
    pairs: list[MatchPair]

    def __post_init__(self):
        srcs = [p.src for p in self.pairs]
        dsts = [p.dst for p in self.pairs]
        if len(set(srcs)) != len(srcs) or len(set(dsts)) != len(dsts):
            raise ValueError("match set is not one-to-one")

    def __len__(self) -> int:
        return len(self.pairs)

    def to_json_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "target_id": self.target_id,
            "pairs": [
                {
                    "src": list(p.src),
                    "dst": list(p.dst),
                    "src_px": list(p.src_px),
                    "dst_px": list(p.dst_px),
                    "dist": p.dist,
                }
                for p in self.pairs
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MatchSet":
        pairs = [
            MatchPair(tuple(p["src"]), tuple(p["dst"]), tuple(p["src_px"]),
                      tuple(p["dst_px"]), float(p["dist"]))
            for p in d["pairs"]
        ]
        return cls(d["source_id"], d["target_id"], pairs)


def write_matchset(m: MatchSet, path) -> None:
    write_json_atomic(path, m.to_json_dict())


def read_matchset(path) -> MatchSet:
    with open(path, "r", encoding="utf-8") as fh:
        return MatchSet.from_json_dict(json.load(fh))


def _pairwise_distances(a: np.ndarray, b: np.ndarray, exact: bool = False,
                        chunk: int = 128) -> np.ndarray:
    """L2 distances between rows of a (La, d) and b (Lb, d).

    The default path expands the squared norm through a matrix product.
    With exact=True distances come from explicit differences, so identical
    vectors give exactly 0; the xi == 0 filter relies on that.
    """
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    if not exact:
        sq = (af * af).sum(axis=1)[:, None] + (bf * bf).sum(axis=1)[None, :] - 2.0 * (af @ bf.T)
        return np.sqrt(np.maximum(sq, 0.0))
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for lo in range(0, a.shape[0], chunk):
        hi = min(lo + chunk, a.shape[0])
        diff = af[lo:hi, None, :] - bf[None, :, :]
        out[lo:hi] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def candidate_pairs(a: FeatureGrid, b: FeatureGrid, cfg: MatchConfig) -> list[tuple[int, int, float]]:
    """All (source cell, target cell, distance) with distance <= xi,
    ascending by distance, truncated at max_candidates."""
    if a.dim != b.dim:
        raise ValueError(f"descriptor dims differ: {a.dim} vs {b.dim}")
    # Near xi = 0 the fast expanded form would miss identical vectors by
    # its ~1e-4 rounding, so fall back to exact differences.
    d = _pairwise_distances(a.flat(), b.flat(), exact=cfg.xi < 1e-3)
    src, dst = np.nonzero(d <= cfg.xi)
    dists = d[src, dst]
    order = np.lexsort((dst, src, dists))
    order = order[: cfg.max_candidates]
    return [(int(src[k]), int(dst[k]), float(dists[k])) for k in order]


@dataclass
class ConsistencyGraph:
    """Nodes are candidate pairs; edges join geometrically consistent ones."""

    candidates: list[tuple[int, int, float]]
    adjacency: np.ndarray
    weights: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.candidates)


def consistency_graph(cands, a: FeatureGrid, b: FeatureGrid, cfg: MatchConfig) -> ConsistencyGraph:
    """Edge (p, q) iff the pairs use distinct cells on both sides and their
    displacement vectors (src_px - dst_px) differ by at most zeta."""
    n = len(cands)
    adj = np.zeros((n, n), dtype=bool)
    if n:
        src = np.array([c[0] for c in cands])
        dst = np.array([c[1] for c in cands])
        su = np.array([a.center_of_flat(int(l)) for l in src])
        du = np.array([b.center_of_flat(int(l)) for l in dst])
        disp = su - du
        diff = disp[:, None, :] - disp[None, :, :]
        close = np.einsum("ijk,ijk->ij", diff, diff) <= cfg.zeta**2
        distinct = (src[:, None] != src[None, :]) & (dst[:, None] != dst[None, :])
        adj = close & distinct
        np.fill_diagonal(adj, False)
    weights = np.array([c[2] for c in cands], dtype=np.float64)
    return ConsistencyGraph(list(cands), adj, weights)


def _degeneracy_order(adj_bits: list[int], n: int) -> list[int]:
    """Repeatedly remove a minimum-degree vertex (lowest index on ties)."""
    remaining = (1 << n) - 1
    degree = [adj_bits[i].bit_count() for i in range(n)]
    order = []
    for _ in range(n):
        best = -1
        best_deg = n + 1
        m = remaining
        while m:
            v = (m & -m).bit_length() - 1
            m &= m - 1
            if degree[v] < best_deg:
                best_deg = degree[v]
                best = v
        order.append(best)
        remaining &= ~(1 << best)
        m = adj_bits[best] & remaining
        while m:
            u = (m & -m).bit_length() - 1
            m &= m - 1
            degree[u] -= 1
    return order


def max_clique(graph: ConsistencyGraph) -> list[int]:
    """A maximum clique of the consistency graph, via Bron-Kerbosch with
    pivoting over a degeneracy ordering.

    Ties between equal-size cliques break toward minimum total appearance
    distance, then the lexicographically smallest node set.  Empty graph
    gives the empty clique.
    """
    n = graph.node_count
    if n == 0:
        return []
    adj = [0] * n
    rows = graph.adjacency
    for i in range(n):
        bits = 0
        for j in np.nonzero(rows[i])[0]:
            bits |= 1 << int(j)
        adj[i] = bits

    weights = graph.weights
    best: dict = {"size": 0, "total": float("inf"), "nodes": ()}

    def consider(r_bits: int) -> None:
        nodes = []
        m = r_bits
        total = 0.0
        while m:
            v = (m & -m).bit_length() - 1
            m &= m - 1
            nodes.append(v)
            total += float(weights[v])
        size = len(nodes)
        key = (-size, total, tuple(nodes))
        cur = (-best["size"], best["total"], best["nodes"])
        if key < cur:
            best["size"] = size
            best["total"] = total
            best["nodes"] = tuple(nodes)

    def expand(r_bits: int, r_size: int, p: int, x: int) -> None:
        if p == 0 and x == 0:
            consider(r_bits)
            return
        if r_size + p.bit_count() < best["size"]:
            return
        # Pivot: vertex of P | X covering the most of P.
        pivot = -1
        pivot_cover = -1
        m = p | x
        while m:
            u = (m & -m).bit_length() - 1
            m &= m - 1
            cover = (p & adj[u]).bit_count()
            if cover > pivot_cover:
                pivot_cover = cover
                pivot = u
        m = p & ~adj[pivot]
        while m:
            v = (m & -m).bit_length() - 1
            m &= m - 1
            bit = 1 << v
            expand(r_bits | bit, r_size + 1, p & adj[v], x & adj[v])
            p &= ~bit
            x |= bit

    order = _degeneracy_order(adj, n)
    pos = {v: k for k, v in enumerate(order)}
    for v in order:
        later = 0
        earlier = 0
        m = adj[v]
        while m:
            u = (m & -m).bit_length() - 1
            m &= m - 1
            if pos[u] > pos[v]:
                later |= 1 << u
            else:
                earlier |= 1 << u
        expand(1 << v, 1, later, earlier)
    return sorted(best["nodes"])


def _fine_block(i: int, j: int, ratio: int, rows: int, cols: int) -> list[tuple[int, int]]:
    """Fine cells under coarse cell (i, j) plus a one-cell ring, in bounds.

    Footprint cells come first so that on tied appearance distances a pair
    re-localizes inside its own coarse cell instead of stealing a ring cell
    that another pair's footprint owns.
    """
    footprint = []
    ring = []
    for fi in range(i * ratio - 1, (i + 1) * ratio + 1):
        for fj in range(j * ratio - 1, (j + 1) * ratio + 1):
            if not (0 <= fi < rows and 0 <= fj < cols):
                continue
            inside = i * ratio <= fi < (i + 1) * ratio and j * ratio <= fj < (j + 1) * ratio
            (footprint if inside else ring).append((fi, fj))
    return footprint + ring


def _refine_pairs(pairs: list[MatchPair], fine_a: FeatureGrid, fine_b: FeatureGrid,
                  coarse_stride: float) -> list[MatchPair]:
    if fine_a.dim != fine_b.dim:
        raise ValueError(f"fine descriptor dims differ: {fine_a.dim} vs {fine_b.dim}")
    ratio = coarse_stride / fine_a.stride
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise ValueError(f"coarse stride {coarse_stride} not an integer multiple of fine stride")
    ratio = int(round(ratio))
    used_a: set[tuple[int, int]] = set()
    used_b: set[tuple[int, int]] = set()
    refined: dict[int, MatchPair] = {}
    order = sorted(range(len(pairs)), key=lambda k: (pairs[k].dist, pairs[k].src, pairs[k].dst))
    for k in order:
        p = pairs[k]
        block_a = [c for c in _fine_block(*p.src, ratio, fine_a.rows, fine_a.cols) if c not in used_a]
        block_b = [c for c in _fine_block(*p.dst, ratio, fine_b.rows, fine_b.cols) if c not in used_b]
        if not block_a or not block_b:
            refined[k] = p
            continue
        va = np.stack([fine_a.data[c] for c in block_a]).astype(np.float64)
        vb = np.stack([fine_b.data[c] for c in block_b]).astype(np.float64)
        diff = va[:, None, :] - vb[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        flat = np.argmin(d)
        ia, ib = divmod(int(flat), len(block_b))
        ca, cb = block_a[ia], block_b[ib]
        used_a.add(ca)
        used_b.add(cb)
        refined[k] = MatchPair(
            p.src, p.dst,
            cell_center(*ca, fine_a), cell_center(*cb, fine_b),
            p.dist,
        )
    return [refined[k] for k in range(len(pairs))]


def match_images(a: FeatureGrid, b: FeatureGrid, fine_a: FeatureGrid | None = None,
                 fine_b: FeatureGrid | None = None,
                 cfg: MatchConfig = MatchConfig()) -> MatchSet:
    """Match grid a to grid b: candidate filter, consistency graph, max clique,
    then optional fine-grid re-localization of the matched coordinates."""
    cands = candidate_pairs(a, b, cfg)
    graph = consistency_graph(cands, a, b, cfg)
    clique = max_clique(graph)
    pairs = []
    for node in clique:
        l, lp, dist = graph.candidates[node]
        src = (l // a.cols, l % a.cols)
        dst = (lp // b.cols, lp % b.cols)
        pairs.append(MatchPair(src, dst, cell_center(*src, a), cell_center(*dst, b), dist))
    pairs.sort(key=lambda p: (p.src, p.dst))
    if fine_a is not None and fine_b is not None and pairs:
        pairs = _refine_pairs(pairs, fine_a, fine_b, a.stride)
    return MatchSet(a.meta.image_id, b.meta.image_id, pairs)


def matching_loss(m: MatchSet, a: FeatureGrid, b: FeatureGrid,
                  cfg: MatchConfig = MatchConfig()) -> float:
    """Diagnostic loss: lambda1 * sum of squared appearance distances plus
    lambda2 * sum over pair-of-pairs of squared displacement disagreement."""
    appearance = 0.0
    for p in m.pairs:
        va = a.data[p.src].astype(np.float64)
        vb = b.data[p.dst].astype(np.float64)
        appearance += float(((va - vb) ** 2).sum())
    geometry = 0.0
    n = len(m.pairs)
    for i in range(n):
        for j in range(i + 1, n):
            pi, pj = m.pairs[i], m.pairs[j]
            du_a = np.subtract(pi.src_px, pj.src_px)
            du_b = np.subtract(pi.dst_px, pj.dst_px)
            geometry += float(((du_a - du_b) ** 2).sum())
    return cfg.lambda1 * appearance + cfg.lambda2 * geometry
