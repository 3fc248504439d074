"""Geometric primitives and the shared domain model.

Positions are plain numpy float64 arrays of shape (3,), in meters. The
composite types below are treated as immutable after construction; all
operations are pure functions, so values can be shared freely across
worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Sequence, Tuple

import numpy as np

__all__ = [
    "DegenerateSegmentError",
    "BranchCluster",
    "LineSegment",
    "SegmentChain",
    "Provenance",
    "SkeletonVertex",
    "SkeletonGraph",
    "point3",
    "point_segment_distances",
    "segment_distances_batch",
    "euclidean_mst",
]


class DegenerateSegmentError(ValueError):
    """Raised for geometry that has collapsed to zero extent."""


def point3(x: float, y: float, z: float) -> np.ndarray:
    """Build a validated 3D point (finite float64 coordinates, meters)."""
    p = np.array([x, y, z], dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point coordinates must be finite, got {p}")
    return p


def _as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point coordinates must be finite, got {p}")
    return p


def _check_confidence(c: float) -> float:
    c = float(c)
    if not (0.0 < c <= 1.0):
        raise ValueError(f"confidence must be in (0, 1], got {c}")
    return c


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class BranchCluster:
    """One segmented branch instance: its 3D points and a mask confidence.

    This is the input contract of the whole pipeline: whatever produced the
    clusters (a segmentation network, the synthetic generator, a file) hands
    them over in this shape.
    """

    points: np.ndarray  # (N, 3) float64, N >= 1
    confidence: float  # in (0, 1]
    cluster_id: int = 0

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) == 0:
            raise ValueError("cluster points must be a non-empty (N, 3) array")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("cluster points must be finite")
        self.confidence = _check_confidence(self.confidence)
        self.cluster_id = int(self.cluster_id)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class LineSegment:
    """A confidence-weighted line segment with an associated branch radius."""

    a: np.ndarray
    b: np.ndarray
    confidence: float
    radius: float

    def __post_init__(self) -> None:
        self.a = _as_point(self.a)
        self.b = _as_point(self.b)
        self.confidence = _check_confidence(self.confidence)
        self.radius = float(self.radius)
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ValueError(f"segment radius must be positive, got {self.radius}")
        if self.length <= 0.0:
            raise DegenerateSegmentError("segment endpoints coincide")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def direction(self) -> np.ndarray:
        """Unit vector from a to b."""
        return (self.b - self.a) / self.length


@dataclass
class SegmentChain:
    """Piecewise-linear branch axis: 4 control points forming 3 segments.

    The three segments share endpoints by construction (they are derived
    from the control points), so the chain is always connected.
    """

    control_points: np.ndarray  # (4, 3) float64
    radius: float
    confidence: float

    def __post_init__(self) -> None:
        cp = np.asarray(self.control_points, dtype=np.float64)
        if cp.shape != (4, 3):
            raise ValueError(f"expected 4 control points, got shape {cp.shape}")
        if not np.all(np.isfinite(cp)):
            raise ValueError("control points must be finite")
        self.control_points = cp
        self.radius = float(self.radius)
        if not (self.radius > 0.0 and np.isfinite(self.radius)):
            raise ValueError(f"chain radius must be positive, got {self.radius}")
        self.confidence = _check_confidence(self.confidence)
        for i in range(3):
            if np.linalg.norm(cp[i + 1] - cp[i]) <= 0.0:
                raise DegenerateSegmentError(f"chain segment {i} has zero length")

    @property
    def segments(self) -> List[LineSegment]:
        cp = self.control_points
        return [
            LineSegment(cp[i], cp[i + 1], self.confidence, self.radius)
            for i in range(3)
        ]

    @property
    def total_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.control_points, axis=0), axis=1)))


class Provenance(Enum):
    """Whether a skeleton vertex was directly observed or bridged in."""

    OBSERVED = "obs"
    PATH_DERIVED = "path"


@dataclass
class SkeletonVertex:
    position: np.ndarray  # (3,)
    radius: float  # >= 0
    provenance: Provenance = Provenance.OBSERVED

    def __post_init__(self) -> None:
        self.position = _as_point(self.position)
        self.radius = float(self.radius)
        if not (self.radius >= 0.0 and np.isfinite(self.radius)):
            raise ValueError(f"vertex radius must be finite and >= 0, got {self.radius}")
        if not isinstance(self.provenance, Provenance):
            self.provenance = Provenance(self.provenance)


@dataclass
class SkeletonGraph:
    """Undirected vertex/edge graph; edges are index pairs into vertices."""

    vertices: List[SkeletonVertex] = field(default_factory=list)
    edges: List[Tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.vertices)
        seen = set()
        normalized = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) out of range for {n} vertices")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            normalized.append(key)
        self.edges = normalized

    def __len__(self) -> int:
        return len(self.vertices)

    def positions(self) -> np.ndarray:
        if not self.vertices:
            return np.empty((0, 3), dtype=np.float64)
        return np.array([v.position for v in self.vertices], dtype=np.float64)

    def radii(self) -> np.ndarray:
        return np.array([v.radius for v in self.vertices], dtype=np.float64)

    def provenances(self) -> List[Provenance]:
        return [v.provenance for v in self.vertices]

    def component_labels(self) -> np.ndarray:
        """Connected-component label per vertex (labels are 0..k-1, ordered
        by smallest vertex index in the component)."""
        n = len(self.vertices)
        parent = list(range(n))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for u, v in self.edges:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[max(ru, rv)] = min(ru, rv)
        labels = np.empty(n, dtype=np.int64)
        remap = {}
        for i in range(n):
            r = find(i)
            if r not in remap:
                remap[r] = len(remap)
            labels[i] = remap[r]
        return labels

    def n_components(self) -> int:
        if not self.vertices:
            return 0
        return int(self.component_labels().max()) + 1

    def is_acyclic(self) -> bool:
        # A forest has exactly n - c edges for n vertices in c components.
        return len(self.edges) == len(self.vertices) - self.n_components()


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def point_segment_distances(p, seg: LineSegment) -> Tuple[float, float]:
    """Axial and radial distance of a point from a line segment.

    The radial distance is the perpendicular distance to the infinite line
    through the segment. The axial distance is zero while the projection of
    the point falls inside the segment and grows as the overshoot beyond the
    nearest endpoint outside of it.
    """
    p = _as_point(p)
    d_ax, d_rad = segment_distances_batch(p.reshape(1, 3), seg.a, seg.b)
    return float(d_ax[0]), float(d_rad[0])


def segment_distances_batch(
    points: np.ndarray, a: np.ndarray, b: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (d_axial, d_radial) for many points against one segment."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    axis = b - a
    length = float(np.linalg.norm(axis))
    if length <= 0.0:
        raise DegenerateSegmentError("segment endpoints coincide")
    u = axis / length
    rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - a
    t = rel @ u
    d_axial = np.maximum(0.0, np.abs(t - 0.5 * length) - 0.5 * length)
    perp = rel - np.outer(t, u)
    d_radial = np.linalg.norm(perp, axis=1)
    return d_axial, d_radial


def _kruskal(
    n: int, cand_u: np.ndarray, cand_v: np.ndarray, cand_w: np.ndarray
) -> List[Tuple[int, int]]:
    """Kruskal over candidate edges, ties broken by smaller (u, v) pair."""
    order = np.lexsort((cand_v, cand_u, cand_w))
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree: List[Tuple[int, int]] = []
    for idx in order:
        u, v = int(cand_u[idx]), int(cand_v[idx])
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
            tree.append((u, v))
            if len(tree) == n - 1:
                break
    return tree


_DENSE_MST_LIMIT = 1400  # all-pairs Kruskal below this, Delaunay candidates above


def euclidean_mst(points) -> List[Tuple[int, int]]:
    """Exact Euclidean minimum spanning tree over a point set.

    Returns the tree as (u, v) index pairs with u < v, sorted by edge
    length (ties by the index pair), so output is deterministic. Small
    inputs run Kruskal over all pairs; larger ones restrict candidates to
    Delaunay edges, which provably contain a Euclidean MST.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.size == 0 or len(pts) == 0:
        raise ValueError("euclidean_mst requires at least one point")
    if pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    n = len(pts)
    if n == 1:
        return []

    if n <= _DENSE_MST_LIMIT:
        iu, iv = np.triu_indices(n, k=1)
        w = np.linalg.norm(pts[iu] - pts[iv], axis=1)
        tree = _kruskal(n, iu, iv, w)
    else:
        tree = _kruskal(n, *_delaunay_candidates(pts))

    tree = [(min(u, v), max(u, v)) for u, v in tree]
    w = np.linalg.norm(pts[[u for u, _ in tree]] - pts[[v for _, v in tree]], axis=1)
    order = np.lexsort(([v for _, v in tree], [u for u, _ in tree], w))
    return [tree[i] for i in order]


def _delaunay_candidates(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Candidate edge set guaranteed to contain an exact EMST.

    Duplicate positions are collapsed first (qhull merges coincident sites);
    each duplicate re-attaches to its representative with a zero-length edge,
    which any MST must effectively contain.
    """
    from scipy.spatial import Delaunay, QhullError, cKDTree

    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    # representative original index per unique position (smallest index wins)
    rep = np.full(len(uniq), -1, dtype=np.int64)
    for orig in range(len(pts) - 1, -1, -1):
        rep[inverse[orig]] = orig

    extra_u, extra_v = [], []
    for orig in range(len(pts)):
        r = rep[inverse[orig]]
        if r != orig:
            extra_u.append(min(r, orig))
            extra_v.append(max(r, orig))

    pairs: set = set()
    try:
        if len(uniq) >= 5:
            tri = Delaunay(uniq)
            for simplex in tri.simplices:
                for i in range(4):
                    for j in range(i + 1, 4):
                        a, b = int(simplex[i]), int(simplex[j])
                        pairs.add((min(a, b), max(a, b)))
        else:
            raise QhullError("too few unique points")
    except QhullError:
        # degenerate (coplanar/collinear) input: fall back to all pairs
        m = len(uniq)
        iu, iv = np.triu_indices(m, k=1)
        pairs = set(zip(iu.tolist(), iv.tolist()))

    if pairs:
        # safety net: union in a k-NN graph so near-degenerate qhull output
        # cannot drop short edges
        k = min(8, len(uniq) - 1)
        if k >= 1:
            tree = cKDTree(uniq)
            _, nbr = tree.query(uniq, k=k + 1)
            for i in range(len(uniq)):
                for j in nbr[i, 1:]:
                    pairs.add((min(i, int(j)), max(i, int(j))))

    pu = np.array([rep[u] for u, _ in pairs] + extra_u, dtype=np.int64)
    pv = np.array([rep[v] for _, v in pairs] + extra_v, dtype=np.int64)
    keep = pu != pv
    pu, pv = pu[keep], pv[keep]
    lo, hi = np.minimum(pu, pv), np.maximum(pu, pv)
    w = np.linalg.norm(pts[lo] - pts[hi], axis=1)
    return lo, hi, w
