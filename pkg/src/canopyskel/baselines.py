"""Comparison joining strategies: plain MST and breakpoint connection.

Both consume the same smoothed vertices / initial forest as the main
method, so a comparison isolates how the fragments get reconnected:

* ``mst_baseline`` simply keeps the full Euclidean minimum spanning tree —
  every fragment gap is leapt by a straight edge, no evidence consulted.
* ``ftsem_baseline`` connects fragment endpoints ("breakpoints") pairwise
  when they are close enough and their growth directions roughly agree
  with the connecting segment, greedily from the shortest candidate up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import SkeletonGraph, SkeletonVertex, euclidean_mst

__all__ = [
    "FtsemConfig",
    "mst_baseline",
    "ftsem_baseline",
    "bridging_vertex_mask",
]


@dataclass
class FtsemConfig:
    max_connect_distance: float = 0.10  # meters
    max_angle_deg: float = 30.0
    endpoint_direction_window: int = 5  # vertices used to estimate direction

    def __post_init__(self) -> None:
        self.max_connect_distance = float(self.max_connect_distance)
        self.max_angle_deg = float(self.max_angle_deg)
        self.endpoint_direction_window = int(self.endpoint_direction_window)
        if not (self.max_connect_distance > 0.0):
            raise ValueError("max_connect_distance must be positive")
        if not (0.0 < self.max_angle_deg < 180.0):
            raise ValueError("max_angle_deg must be in (0, 180)")
        if self.endpoint_direction_window < 2:
            raise ValueError("endpoint_direction_window must be >= 2")


def mst_baseline(vertices: Sequence[SkeletonVertex]) -> SkeletonGraph:
    """Full Euclidean MST over the vertices; always one component."""
    if not vertices:
        raise ValueError("mst_baseline requires at least one vertex")
    pos = np.array([v.position for v in vertices], dtype=np.float64)
    return SkeletonGraph(list(vertices), euclidean_mst(pos))


def _adjacency(graph: SkeletonGraph) -> List[List[int]]:
    adj: List[List[int]] = [[] for _ in range(len(graph.vertices))]
    for u, v in graph.edges:
        adj[u].append(v)
        adj[v].append(u)
    return adj


def _endpoint_direction(
    graph: SkeletonGraph, adj: List[List[int]], endpoint: int, window: int
) -> Optional[np.ndarray]:
    """Outward growth direction at a degree-1 vertex.

    Walks inward from the endpoint along the chain (stopping at a fork or
    after `window` vertices) and averages the unit vectors of the walked
    edges, each oriented toward the endpoint.
    """
    walk = [endpoint]
    while len(walk) < window:
        cur = walk[-1]
        nxt = [n for n in adj[cur] if len(walk) < 2 or n != walk[-2]]
        if len(walk) >= 2 and len(adj[cur]) != 2:
            break  # fork or another endpoint: the chain ends here
        if not nxt:
            break
        walk.append(nxt[0])

    if len(walk) < 2:
        return None
    pos = graph.positions()
    dirs = []
    for inner, outer in zip(walk[1:], walk[:-1]):
        step = pos[outer] - pos[inner]
        norm = np.linalg.norm(step)
        if norm > 0.0:
            dirs.append(step / norm)
    if not dirs:
        return None
    mean = np.mean(dirs, axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0.0 else None


def ftsem_baseline(
    g_init: SkeletonGraph, cfg: Optional[FtsemConfig] = None
) -> SkeletonGraph:
    """Join forest fragments by the breakpoint distance/angle rule.

    A candidate connection between two fragments' endpoints is accepted
    when the endpoints lie within the distance threshold and both endpoint
    directions deviate from the connecting segment by at most the angle
    threshold. Candidates are processed in ascending distance order and
    skipped when their fragments are already connected, so no cycles can
    form.
    """
    cfg = cfg or FtsemConfig()
    vertices = list(g_init.vertices)
    edges = list(g_init.edges)
    graph = SkeletonGraph(vertices, edges)
    n = len(vertices)
    if n == 0:
        return graph

    adj = _adjacency(graph)
    labels = graph.component_labels()
    pos = graph.positions()

    endpoints = [i for i in range(n) if len(adj[i]) == 1]
    directions: Dict[int, np.ndarray] = {}
    for e in endpoints:
        d = _endpoint_direction(graph, adj, e, cfg.endpoint_direction_window)
        if d is not None:
            directions[e] = d

    cos_limit = np.cos(np.deg2rad(cfg.max_angle_deg))
    candidates: List[Tuple[float, int, int]] = []
    usable = sorted(directions)
    for ia, a in enumerate(usable):
        for b in usable[ia + 1 :]:
            if labels[a] == labels[b]:
                continue
            connector = pos[b] - pos[a]
            dist = float(np.linalg.norm(connector))
            if dist > cfg.max_connect_distance or dist <= 0.0:
                continue
            unit = connector / dist
            if directions[a] @ unit < cos_limit:
                continue
            if directions[b] @ -unit < cos_limit:
                continue
            candidates.append((dist, a, b))

    candidates.sort()
    parent = list(range(int(labels.max()) + 1 if n else 0))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    new_edges = list(edges)
    for dist, a, b in candidates:
        ra, rb = find(int(labels[a])), find(int(labels[b]))
        if ra == rb:
            continue  # fragments already connected; adding would cycle
        parent[max(ra, rb)] = min(ra, rb)
        new_edges.append((a, b))

    return SkeletonGraph(vertices, new_edges)


def bridging_vertex_mask(graph: SkeletonGraph, voxel_size: float) -> np.ndarray:
    """Vertices incident to an edge longer than the voxel size.

    For joining strategies that bridge gaps with straight edges instead of
    new vertices, these endpoints are the vertices recovered "through" an
    occlusion, and stand in for path-derived provenance when computing the
    occluded-recovery share of the score.
    """
    voxel_size = float(voxel_size)
    pos = graph.positions()
    mask = np.zeros(len(graph.vertices), dtype=bool)
    for u, v in graph.edges:
        if np.linalg.norm(pos[u] - pos[v]) > voxel_size:
            mask[u] = True
            mask[v] = True
    return mask
