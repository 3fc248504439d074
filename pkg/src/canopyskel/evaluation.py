"""Scoring of extracted skeletons against the known ground truth.

An output vertex is a true positive when it lies within the correspondence
radius of the ground-truth centerline — measured against the continuous
polyline, not just its sample vertices, so scores do not depend on how
densely the ground truth happens to be sampled. Recall counts ground-truth
vertices with no output vertex nearby as misses. The occluded-recovery
share is the fraction of output vertices that are true positives obtained
by bridging rather than direct observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Provenance, SkeletonGraph

__all__ = [
    "VertexLabel",
    "EvalReport",
    "DEFAULT_MATCH_RADIUS",
    "polyline_distances",
    "label_vertices",
    "aggregate",
    "render_summary_table",
]

DEFAULT_MATCH_RADIUS = 0.02  # meters

_EDGE_CHUNK = 256  # ground-truth edges processed per vectorized block


class VertexLabel(Enum):
    TP = "tp"
    TP_OCC = "tp_occ"
    FP = "fp"


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tp_occ: int
    precision: float
    recall: float
    osr: float
    per_vertex_labels: List[VertexLabel] = field(default_factory=list)

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tp_occ) < 0:
            raise ValueError("counts must be non-negative")
        if self.tp_occ > self.tp:
            raise ValueError("tp_occ cannot exceed tp")


def _graph_of(gt) -> SkeletonGraph:
    # accept either a bare graph or a ground-truth wrapper carrying one
    return gt.graph if hasattr(gt, "graph") else gt


def polyline_distances(points: np.ndarray, gt: SkeletonGraph) -> np.ndarray:
    """Distance from each point to the nearest spot on the gt polyline.

    Minimum over all gt edges of the point-to-segment distance; a graph
    with no edges degrades to vertex distances.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    gt_pos = gt.positions()
    if not len(gt_pos):
        raise ValueError("ground truth has no vertices")
    if not gt.edges:
        d, _ = cKDTree(gt_pos).query(pts)
        return np.asarray(d, dtype=np.float64)

    edges = np.asarray(gt.edges, dtype=np.int64)
    a = gt_pos[edges[:, 0]]
    b = gt_pos[edges[:, 1]]
    axis = b - a
    length = np.linalg.norm(axis, axis=1)
    length = np.where(length > 0.0, length, 1.0)
    u = axis / length[:, None]

    best = np.full(len(pts), np.inf)
    for lo in range(0, len(edges), _EDGE_CHUNK):
        hi = min(lo + _EDGE_CHUNK, len(edges))
        rel = pts[None, :, :] - a[lo:hi, None, :]  # (E, P, 3)
        t = np.einsum("epc,ec->ep", rel, u[lo:hi])
        t = np.clip(t, 0.0, np.linalg.norm(axis[lo:hi], axis=1)[:, None])
        closest = a[lo:hi, None, :] + t[:, :, None] * u[lo:hi, None, :]
        d = np.linalg.norm(pts[None, :, :] - closest, axis=2)
        np.minimum(best, d.min(axis=0), out=best)
    return best


def label_vertices(
    output: SkeletonGraph,
    gt,
    radius: float = DEFAULT_MATCH_RADIUS,
    occ_eligible: Optional[np.ndarray] = None,
) -> EvalReport:
    """Score an output skeleton against the ground truth.

    Vertices within `radius` of the gt polyline are true positives, the
    rest false positives; gt vertices with no output vertex within
    `radius` are false negatives. A true positive counts toward the
    occluded-recovery numerator when it was produced by path bridging —
    or, for methods that bridge with bare edges instead of new vertices,
    when its entry in `occ_eligible` is set.
    """
    gt_graph = _graph_of(gt)
    if not output.vertices or not gt_graph.vertices:
        raise ValueError("both skeletons must be non-empty")
    radius = float(radius)

    out_pos = output.positions()
    dists = polyline_distances(out_pos, gt_graph)
    tp_mask = dists <= radius

    if occ_eligible is None:
        eligible = np.array(
            [v.provenance is Provenance.PATH_DERIVED for v in output.vertices]
        )
    else:
        eligible = np.asarray(occ_eligible, dtype=bool).reshape(-1)
        if len(eligible) != len(output.vertices):
            raise ValueError("occ_eligible length must match vertex count")

    occ_mask = tp_mask & eligible
    tp = int(tp_mask.sum())
    fp = int(len(out_pos) - tp)
    tp_occ = int(occ_mask.sum())

    gt_pos = gt_graph.positions()
    nearest, _ = cKDTree(out_pos).query(gt_pos)
    fn = int((nearest > radius).sum())

    total_out = tp + fp
    precision = tp / total_out if total_out else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    osr = tp_occ / total_out if total_out else 0.0

    labels = [
        VertexLabel.TP_OCC if occ else (VertexLabel.TP if hit else VertexLabel.FP)
        for hit, occ in zip(tp_mask, occ_mask)
    ]
    return EvalReport(tp, fp, fn, tp_occ, precision, recall, osr, labels)


def aggregate(rows: Sequence[Mapping]) -> List[Dict]:
    """Mean precision/recall/osr per (method, density) cell.

    Each row needs at least method, density, precision, recall, osr; the
    summary is sorted by method then density so output order is stable.
    """
    if not rows:
        raise ValueError("nothing to aggregate")
    cells: Dict[Tuple[str, int], List[Mapping]] = {}
    for row in rows:
        cells.setdefault((str(row["method"]), int(row["density"])), []).append(row)

    summaries = []
    for (method, density) in sorted(cells):
        group = cells[(method, density)]
        summaries.append(
            {
                "method": method,
                "density": density,
                "precision": float(np.mean([r["precision"] for r in group])),
                "recall": float(np.mean([r["recall"] for r in group])),
                "osr": float(np.mean([r["osr"] for r in group])),
                "n": len(group),
            }
        )
    return summaries


def render_summary_table(summaries: Sequence[Mapping]) -> str:
    """Methods-by-density text table of mean precision / recall / osr."""
    methods = sorted({s["method"] for s in summaries})
    densities = sorted({s["density"] for s in summaries})
    cell = {(s["method"], s["density"]): s for s in summaries}

    header = ["method".ljust(12)] + [f"density {d}".center(24) for d in densities]
    sub = ["".ljust(12)] + [
        f'{"prec":>7} {"rec":>7} {"osr":>7} ' for _ in densities
    ]
    lines = ["".join(header), "".join(sub)]
    for m in methods:
        parts = [m.ljust(12)]
        for d in densities:
            s = cell.get((m, d))
            if s is None:
                parts.append(" " * 24)
            else:
                parts.append(
                    f'{s["precision"]:7.3f} {s["recall"]:7.3f} {s["osr"]:7.3f} '
                )
        lines.append("".join(parts))
    return "\n".join(lines)
