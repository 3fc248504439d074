"""Skeleton assembly: vertex sampling, smoothing, and gap bridging.

The vertices of the skeleton are sampled along every fitted chain, pulled
onto the branch axis by iterative neighborhood averaging, and connected
into an initial forest (Euclidean MST with over-long edges removed; the
fragments are where occlusion broke the branch). Fragments are then joined
by searching the likelihood grid for the cheapest corridor of accumulated
evidence between any two fragments, repeatedly splicing in the globally
cheapest path until nothing reachable remains.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .geometry import (
    Provenance,
    SegmentChain,
    SkeletonGraph,
    SkeletonVertex,
    euclidean_mst,
)
from .likelihood import GridSpec, LikelihoodGrid

__all__ = [
    "SmoothingConfig",
    "PathSearchConfig",
    "LikelihoodGraph",
    "PathResult",
    "sample_vertices",
    "laplacian_smooth",
    "build_initial_graph",
    "build_likelihood_graph",
    "min_cost_path",
    "join_subgraphs",
]

log = logging.getLogger(__name__)

_MERGE_EPS = 1e-9  # sampled vertices closer than this collapse into one

_NO_PREDECESSOR = -9999  # sentinel used by scipy's predecessor matrices

# Per-edge increment added to search weights so equal-cost paths tie-break
# by edge count. The smallest positive edge cost is -log((1+p)/2) for the
# largest p below 1, about 2^-53; 2^-66 leaves three orders of magnitude
# of hop accumulation before a tie-break could outweigh a real cost
# difference, and sums of it are exact dyadics.
HOP_EPSILON = 2.0**-66


@dataclass
class SmoothingConfig:
    neighbors_k: int = 10
    convergence_threshold: float = 1e-4  # total displacement, meters
    max_iterations: int = 100

    def __post_init__(self) -> None:
        self.neighbors_k = int(self.neighbors_k)
        self.convergence_threshold = float(self.convergence_threshold)
        self.max_iterations = int(self.max_iterations)
        if self.neighbors_k < 1:
            raise ValueError("neighbors_k must be >= 1")
        if not (self.convergence_threshold > 0.0):
            raise ValueError("convergence_threshold must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class PathSearchConfig:
    p_min: float = 0.05  # voxels below this never enter the path graph
    max_path_cost: float = np.inf  # accept any finite-cost path by default

    def __post_init__(self) -> None:
        self.p_min = float(self.p_min)
        self.max_path_cost = float(self.max_path_cost)
        if not (0.0 < self.p_min < 1.0):
            raise ValueError(f"p_min must be in (0, 1), got {self.p_min}")
        if not (self.max_path_cost > 0.0):
            raise ValueError("max_path_cost must be positive")


class LikelihoodGraph:
    """Weighted graph over grid voxels that carry enough evidence.

    Nodes are the voxels with probability >= p_min; edges connect the 26
    spatial neighbors; an edge costs the negative log of the mean of its
    endpoint probabilities, so corridors of strong evidence are cheap and
    cost is always finite and non-negative.

    Fully certain voxels (p = 1.0 after heavy fusion) give exact-zero edge
    costs, so whole regions can tie at cost 0. Ties resolve to the fewest
    edges: the search runs on cost + HOP_EPSILON per edge, a quantity small
    enough (any realistic hop count times it stays below the smallest
    positive cost, which is -log of the largest double below 1) that it
    can only reorder exact ties. Reported path costs never include it.
    """

    def __init__(
        self,
        spec: GridSpec,
        voxels: np.ndarray,
        probs: np.ndarray,
        edges: np.ndarray,
        costs: np.ndarray,
    ):
        self.spec = spec
        self.voxels = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
        self.probs = np.asarray(probs, dtype=np.float64).reshape(-1)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.costs = np.asarray(costs, dtype=np.float64).reshape(-1)
        if len(self.voxels):
            self._linear = np.ravel_multi_index(
                (self.voxels[:, 0], self.voxels[:, 1], self.voxels[:, 2]), spec.dims
            )
        else:
            self._linear = np.empty(0, dtype=np.int64)
        n = len(self.voxels)
        if len(self.edges):
            u, v = self.edges[:, 0], self.edges[:, 1]
            w = self.costs + HOP_EPSILON
            self._adj = csr_matrix(
                (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                shape=(n, n),
            )
        else:
            self._adj = csr_matrix((n, n), dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.voxels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def nodes_for_voxels(self, voxel_indices: np.ndarray) -> np.ndarray:
        """Node id per voxel index triple; -1 where the voxel is not a node."""
        idx = np.asarray(voxel_indices, dtype=np.int64).reshape(-1, 3)
        out = np.full(len(idx), -1, dtype=np.int64)
        if not len(self._linear) or not len(idx):
            return out
        ok = self.spec.in_bounds(idx)
        if not np.any(ok):
            return out
        lin = np.ravel_multi_index(
            (idx[ok, 0], idx[ok, 1], idx[ok, 2]), self.spec.dims
        )
        pos = np.searchsorted(self._linear, lin)
        pos = np.minimum(pos, len(self._linear) - 1)
        hit = self._linear[pos] == lin
        found = np.where(ok)[0]
        out[found[hit]] = pos[hit]
        return out

    def centers(self, node_ids: Sequence[int]) -> np.ndarray:
        return self.spec.center_of(self.voxels[np.asarray(node_ids, dtype=np.int64)])

    def path_cost(self, nodes: Sequence[int]) -> float:
        """Eq.-style cost of a node sequence, summed edge by edge.

        Computed from the node probabilities directly, so it carries no
        tie-break epsilon; callers pass node sequences that are actual
        paths in the graph.
        """
        seq = np.asarray(nodes, dtype=np.int64)
        if len(seq) < 2:
            return 0.0
        means = (self.probs[seq[:-1]] + self.probs[seq[1:]]) / 2.0
        return float(np.sum(np.maximum(-np.log(means), 0.0)))


class PathResult(NamedTuple):
    nodes: List[int]
    cost: float


# ---------------------------------------------------------------------------
# Vertex sampling and smoothing
# ---------------------------------------------------------------------------


def sample_vertices(
    chains: Sequence[SegmentChain],
    spacing: float,
    return_endpoint_mask: bool = False,
):
    """Equally spaced points along every chain segment, endpoints included.

    Each segment contributes points at intervals no larger than `spacing`
    (the interval is shrunk to divide the segment length evenly); a segment
    shorter than the spacing still yields both endpoints. Points that
    coincide — shared endpoints of consecutive segments, chains meeting at
    a fork — are merged into a single vertex that keeps the attributes of
    its first occurrence.

    With ``return_endpoint_mask`` the result is ``(vertices, mask)`` where
    the mask flags vertices at a chain's very first or last sample — the
    free ends that anchored smoothing holds in place.
    """
    spacing = float(spacing)
    if spacing <= 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")

    positions: List[np.ndarray] = []
    radii: List[float] = []
    is_end: List[bool] = []
    for chain in chains:
        segs = chain.segments
        for si, seg in enumerate(segs):
            n_int = max(1, int(np.ceil(seg.length / spacing - 1e-12)))
            ts = np.linspace(0.0, 1.0, n_int + 1)
            pts = seg.a + np.outer(ts, seg.b - seg.a)
            positions.extend(pts)
            radii.extend([chain.radius] * len(pts))
            ends = [False] * len(pts)
            if si == 0:
                ends[0] = True
            if si == len(segs) - 1:
                ends[-1] = True
            is_end.extend(ends)
    if not positions:
        return ([], np.zeros(0, dtype=bool)) if return_endpoint_mask else []

    pos = np.asarray(positions)
    # merge coincident samples, keeping the earliest occurrence
    tree = cKDTree(pos)
    parent = np.arange(len(pos))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in tree.query_pairs(_MERGE_EPS):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    vertices: List[SkeletonVertex] = []
    endpoint_flags: List[bool] = []
    # an endpoint flag survives a merge only if every occurrence was one,
    # so a chain end sitting on another chain's interior is not held fixed
    merged_end: Dict[int, bool] = {}
    for i in range(len(pos)):
        r = find(i)
        merged_end[r] = merged_end.get(r, True) and is_end[i]
    for i in range(len(pos)):
        if find(i) == i:
            vertices.append(
                SkeletonVertex(pos[i], radii[i], Provenance.OBSERVED)
            )
            endpoint_flags.append(merged_end[i])
    if return_endpoint_mask:
        return vertices, np.array(endpoint_flags, dtype=bool)
    return vertices


def laplacian_smooth(
    vertices: Sequence[SkeletonVertex],
    cfg: Optional[SmoothingConfig] = None,
    pinned: Optional[np.ndarray] = None,
) -> List[SkeletonVertex]:
    """Pull vertices toward the local point-cloud center by averaging.

    Every vertex is synchronously repositioned to the mean of its k nearest
    neighbors (itself excluded, neighborhoods recomputed each round) until
    the summed displacement of one round drops below the threshold or the
    iteration cap is reached. Radii and provenance ride along unchanged.

    `pinned` optionally marks vertices that must not move (chain free ends,
    typically). Anchoring them keeps the averaging from eroding runs inward
    from their ends while the interior still converges onto the local
    center; without anchors the iteration's fixed points are isolated
    clumps of coincident vertices.
    """
    cfg = cfg or SmoothingConfig()
    if not vertices:
        return []
    pos = np.array([v.position for v in vertices], dtype=np.float64)
    n = len(pos)
    if pinned is None:
        movable = np.ones(n, dtype=bool)
    else:
        pinned = np.asarray(pinned, dtype=bool)
        if pinned.shape != (n,):
            raise ValueError("pinned mask length must match vertex count")
        movable = ~pinned
    k_eff = min(cfg.neighbors_k, n - 1)
    if k_eff >= 1 and movable.any():
        for _ in range(cfg.max_iterations):
            tree = cKDTree(pos)
            _, nbr = tree.query(pos[movable], k=k_eff + 1)
            nbr = np.atleast_2d(nbr)
            new_pos = pos.copy()
            new_pos[movable] = pos[nbr[:, 1:]].mean(axis=1)
            displacement = float(np.linalg.norm(new_pos - pos, axis=1).sum())
            pos = new_pos
            if displacement < cfg.convergence_threshold:
                break
    return [
        SkeletonVertex(p, v.radius, v.provenance) for p, v in zip(pos, vertices)
    ]


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def build_initial_graph(
    vertices: Sequence[SkeletonVertex], voxel_size: float
) -> SkeletonGraph:
    """Euclidean MST over the vertices, with every over-long edge dropped.

    Edges longer than the voxel size are exactly the ones that would leap
    across occlusion gaps without evidence; removing them leaves one
    subgraph per contiguously observed fragment.
    """
    if not vertices:
        raise ValueError("build_initial_graph requires at least one vertex")
    voxel_size = float(voxel_size)
    pos = np.array([v.position for v in vertices], dtype=np.float64)
    edges = euclidean_mst(pos)
    kept = [
        (u, v)
        for u, v in edges
        if np.linalg.norm(pos[u] - pos[v]) <= voxel_size
    ]
    return SkeletonGraph(list(vertices), kept)


_NEIGHBOR_OFFSETS = np.array(
    [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) > (0, 0, 0)
    ],
    dtype=np.int64,
)  # the 13 lexicographically-positive offsets of the 26-neighborhood


def build_likelihood_graph(
    grid: LikelihoodGrid, cfg: Optional[PathSearchConfig] = None
) -> LikelihoodGraph:
    """Threshold the grid at p_min and wire up the 26-neighborhood."""
    cfg = cfg or PathSearchConfig()
    idx, vals = grid.stored()
    keep = vals >= cfg.p_min
    idx, vals = idx[keep], vals[keep]
    spec = grid.spec

    if not len(idx):
        return LikelihoodGraph(
            spec,
            np.empty((0, 3), dtype=np.int64),
            np.empty(0),
            np.empty((0, 2), dtype=np.int64),
            np.empty(0),
        )

    linear = np.ravel_multi_index((idx[:, 0], idx[:, 1], idx[:, 2]), spec.dims)
    # `stored` yields lexicographic order, so `linear` is already sorted
    edge_u: List[np.ndarray] = []
    edge_v: List[np.ndarray] = []
    for off in _NEIGHBOR_OFFSETS:
        nb = idx + off
        ok = spec.in_bounds(nb)
        if not np.any(ok):
            continue
        src = np.where(ok)[0]
        lin_nb = np.ravel_multi_index(
            (nb[ok, 0], nb[ok, 1], nb[ok, 2]), spec.dims
        )
        pos = np.searchsorted(linear, lin_nb)
        pos = np.minimum(pos, len(linear) - 1)
        hit = linear[pos] == lin_nb
        edge_u.append(src[hit])
        edge_v.append(pos[hit])

    if edge_u:
        u = np.concatenate(edge_u)
        v = np.concatenate(edge_v)
    else:
        u = np.empty(0, dtype=np.int64)
        v = np.empty(0, dtype=np.int64)
    costs = -np.log((vals[u] + vals[v]) / 2.0)
    costs = np.maximum(costs, 0.0)  # guard the p=1,1 case against -0.0
    return LikelihoodGraph(spec, idx, vals, np.stack([u, v], axis=1), costs)


# ---------------------------------------------------------------------------
# Path search and joining
# ---------------------------------------------------------------------------


def _walk_to_source(pred: np.ndarray, node: int) -> List[int]:
    """Follow predecessors from `node` back to its search source."""
    out = [int(node)]
    while pred[out[-1]] != _NO_PREDECESSOR:
        out.append(int(pred[out[-1]]))
    return out


def min_cost_path(
    graph: LikelihoodGraph,
    source_nodes: Sequence[int],
    target_nodes: Sequence[int],
) -> Optional[PathResult]:
    """Cheapest corridor between two node sets, or None if unreachable.

    Runs one multi-source shortest-path sweep from all sources and picks
    the best target; a node that belongs to both sets short-circuits to a
    single-node path of cost zero. Ties go to the smallest target node id;
    the returned cost is re-summed edge by edge along the returned path.
    """
    sources = np.unique(np.asarray(source_nodes, dtype=np.int64))
    targets = np.unique(np.asarray(target_nodes, dtype=np.int64))
    if not len(sources) or not len(targets):
        return None

    shared = np.intersect1d(sources, targets)
    if len(shared):
        return PathResult([int(shared[0])], 0.0)

    dist, pred, _ = dijkstra(
        graph._adj,
        directed=True,
        indices=sources,
        return_predecessors=True,
        min_only=True,
    )
    dt = dist[targets]
    if not np.any(np.isfinite(dt)):
        return None
    best = int(targets[np.lexsort((targets, dt))[0]])
    chain = _walk_to_source(pred, best)
    chain.reverse()  # source ... target
    return PathResult(chain, graph.path_cost(chain))


def _interp_radii(r_a: float, r_b: float, count: int) -> np.ndarray:
    """Radii for `count` interior bridge vertices between two endpoints."""
    fracs = (np.arange(1, count + 1)) / (count + 1)
    return r_a + fracs * (r_b - r_a)


def join_subgraphs(
    g_init: SkeletonGraph,
    g_l: LikelihoodGraph,
    cfg: Optional[PathSearchConfig] = None,
) -> SkeletonGraph:
    """Bridge forest fragments through the likelihood grid.

    Repeatedly finds the globally cheapest evidence corridor between any
    two fragments and splices it in as new vertices at the corridor's voxel
    centers, until no fragment pair is reachable (or every candidate
    exceeds the cost ceiling). One sweep per round from all fragments at
    once finds the global minimum: the cheapest inter-fragment path must
    cross some edge whose endpoints were reached from different fragments,
    and scanning those edges recovers it exactly.

    Fragments whose vertices all fall in voxels below the evidence floor
    are unreachable by construction and stay separate.
    """
    cfg = cfg or PathSearchConfig()
    vertices: List[SkeletonVertex] = list(g_init.vertices)
    edges: List[Tuple[int, int]] = list(g_init.edges)
    if not vertices:
        return SkeletonGraph([], [])

    labels = g_init.component_labels()
    n_comps = int(labels.max()) + 1
    if n_comps <= 1 or g_l.n_nodes == 0:
        return SkeletonGraph(vertices, edges)

    positions = g_init.positions()
    vert_nodes = g_l.nodes_for_voxels(g_l.spec.voxel_of(positions))

    # comp -> {node id -> attached vertex id (smallest wins)}
    comp_nodes: Dict[int, Dict[int, int]] = {c: {} for c in range(n_comps)}
    for vid in range(len(vertices)):
        node = int(vert_nodes[vid])
        if node < 0:
            continue
        anchors = comp_nodes[int(labels[vid])]
        if node not in anchors:
            anchors[node] = vid

    # union-find over component labels; smallest label is the survivor
    comp_parent = list(range(n_comps))

    def comp_find(c: int) -> int:
        while comp_parent[c] != c:
            comp_parent[c] = comp_parent[comp_parent[c]]
            c = comp_parent[c]
        return c

    def merge_into(keep: int, absorb: int, path_anchors: Dict[int, int]) -> None:
        for node, vid in comp_nodes[absorb].items():
            comp_nodes[keep].setdefault(node, vid)
        for node, vid in path_anchors.items():
            comp_nodes[keep].setdefault(node, vid)
        comp_nodes[absorb] = {}
        comp_parent[absorb] = keep

    def splice(comp_a: int, comp_b: int, path: List[int]) -> None:
        """Connect two components along a node path (may be length 1)."""
        va = comp_nodes[comp_a][path[0]]
        vb = comp_nodes[comp_b][path[-1]]
        interior = path[1:-1]
        new_anchors: Dict[int, int] = {}
        if interior:
            centers = g_l.centers(interior)
            radii = _interp_radii(
                vertices[va].radius, vertices[vb].radius, len(interior)
            )
            prev = va
            for node, center, r in zip(interior, centers, radii):
                vid = len(vertices)
                vertices.append(
                    SkeletonVertex(center, float(r), Provenance.PATH_DERIVED)
                )
                new_anchors.setdefault(node, vid)
                edges.append((prev, vid))
                prev = vid
            edges.append((prev, vb))
        else:
            edges.append((va, vb))
        keep, absorb = min(comp_a, comp_b), max(comp_a, comp_b)
        merge_into(keep, absorb, new_anchors)

    owner_by_node = np.full(g_l.n_nodes, -1, dtype=np.int64)

    while True:
        # fold in any components that share a voxel: zero-cost joins
        merged_zero = False
        seen: Dict[int, int] = {}
        for c in sorted(comp_nodes):
            if comp_find(c) != c or not comp_nodes[c]:
                continue
            for node in sorted(comp_nodes[c]):
                other = seen.get(node)
                if other is not None and comp_find(other) != c:
                    splice(comp_find(other), c, [node])
                    merged_zero = True
                    break
                seen[node] = c
            if merged_zero:
                break
        if merged_zero:
            continue

        active = [c for c in range(n_comps) if comp_find(c) == c and comp_nodes[c]]
        if len(active) < 2:
            break

        owner_by_node[:] = -1
        source_list: List[int] = []
        for c in active:
            nodes = list(comp_nodes[c])
            owner_by_node[nodes] = c
            source_list.extend(nodes)
        sources = np.unique(np.asarray(source_list, dtype=np.int64))

        dist, pred, src = dijkstra(
            g_l._adj,
            directed=True,
            indices=sources,
            return_predecessors=True,
            min_only=True,
        )
        node_comp = np.where(src >= 0, owner_by_node[np.maximum(src, 0)], -1)

        eu, ev = g_l.edges[:, 0], g_l.edges[:, 1]
        cu, cv = node_comp[eu], node_comp[ev]
        valid = (cu >= 0) & (cv >= 0) & (cu != cv)
        if not np.any(valid):
            break
        total = dist[eu[valid]] + g_l.costs[valid] + dist[ev[valid]]
        lo = np.minimum(cu[valid], cv[valid])
        hi = np.maximum(cu[valid], cv[valid])
        cand = np.where(valid)[0]
        pick = cand[np.lexsort((g_l.edges[cand, 1], g_l.edges[cand, 0], hi, lo, total))[0]]

        u, v = int(g_l.edges[pick, 0]), int(g_l.edges[pick, 1])
        half_u = _walk_to_source(pred, u)  # u ... source in comp of u
        half_v = _walk_to_source(pred, v)
        path = half_u[::-1] + half_v
        best_cost = g_l.path_cost(path)  # epsilon-free, for the ceiling test
        if best_cost > cfg.max_path_cost:
            log.debug("cheapest remaining path costs %.4f, over ceiling", best_cost)
            break

        splice(int(node_comp[u]), int(node_comp[v]), path)
        log.debug(
            "joined components %d and %d through %d voxels (cost %.4f)",
            int(node_comp[u]),
            int(node_comp[v]),
            len(path),
            best_cost,
        )

    return SkeletonGraph(vertices, edges)
