"""Fit a 3-segment polyline axis and a radius to each branch cluster.

The axis is a degree-one B-spline with four control points, solved by
linear least squares: clamped uniform knots on [0, 1] with interior knots
at 1/3 and 2/3, point parameters assigned by normalized chord length after
ordering the cluster along its first principal component. The radius comes
from the spread of the cluster along its second principal component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import BranchCluster, SegmentChain

__all__ = [
    "DegenerateClusterError",
    "FitConfig",
    "fit_chain",
    "estimate_radius",
    "evaluate_chain",
    "chain_basis_matrix",
]


class DegenerateClusterError(ValueError):
    """Cluster has too few points or too little geometric extent."""


@dataclass
class FitConfig:
    min_points_full_fit: int = 8  # below this, fall back to a straight line

    def __post_init__(self) -> None:
        self.min_points_full_fit = int(self.min_points_full_fit)
        if self.min_points_full_fit < 4:
            raise ValueError("min_points_full_fit must be >= 4")


_INTERIOR_KNOTS = (1.0 / 3.0, 2.0 / 3.0)


def chain_basis_matrix(u: np.ndarray) -> np.ndarray:
    """Degree-1 basis functions at parameters u, one row per parameter.

    The four hat functions peak at 0, 1/3, 2/3, 1; each row sums to 1, so
    the curve is the polyline through the control points, traversed
    linearly between breakpoints.
    """
    u = np.asarray(u, dtype=np.float64)
    breaks = np.array([0.0, *_INTERIOR_KNOTS, 1.0])
    basis = np.zeros((len(u), 4), dtype=np.float64)
    for i in range(3):
        lo, hi = breaks[i], breaks[i + 1]
        if i < 2:
            mask = (u >= lo) & (u < hi)
        else:
            mask = (u >= lo) & (u <= hi)
        local = (u[mask] - lo) / (hi - lo)
        basis[mask, i] = 1.0 - local
        basis[mask, i + 1] = local
    return basis


def evaluate_chain(chain: SegmentChain, u: np.ndarray) -> np.ndarray:
    """Points on the chain at spline parameters u in [0, 1]."""
    return chain_basis_matrix(u) @ chain.control_points


def _principal_axes(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centered SVD: returns (centroid, axes rows sorted by variance, singular values)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    return centroid, vt, s


def _canonical_axis_sign(projections: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Fix the sign of a principal axis deterministically.

    Uses the third moment of the projections (rotation-equivariant); for
    symmetric distributions falls back to the sign of the axis component
    with the largest magnitude.
    """
    centered = projections - projections.mean()
    scale = np.sqrt(np.mean(centered**2)) + 1e-300
    skew = np.mean((centered / scale) ** 3)
    if abs(skew) > 1e-8:
        return axis if skew > 0 else -axis
    dominant = int(np.argmax(np.abs(axis)))
    return axis if axis[dominant] > 0 else -axis


def estimate_radius(cluster: BranchCluster) -> float:
    """Branch radius from the cluster's spread across its main axis.

    Half the peak-to-peak extent of the point projections on the second
    principal component. Raises for clusters that are too small or
    effectively one-dimensional, where that spread is meaningless.
    """
    points = cluster.points
    if len(points) < 3:
        raise DegenerateClusterError(
            f"radius estimation needs >= 3 points, got {len(points)}"
        )
    _, axes, svals = _principal_axes(points)
    scale = svals[0]
    if scale <= 0.0 or svals[1] <= 1e-9 * scale:
        raise DegenerateClusterError("cluster is rank-deficient (collinear points)")
    proj = points @ axes[1]
    radius = float(proj.max() - proj.min()) / 2.0
    if radius <= 0.0:
        raise DegenerateClusterError("cluster has no lateral extent")
    return radius


def _line_fallback_control_points(points: np.ndarray) -> np.ndarray:
    """Least-squares line through the points, cut into 3 equal segments."""
    centroid, axes, svals = _principal_axes(points)
    if svals[0] <= 1e-12:
        raise DegenerateClusterError("all cluster points coincide")
    proj = points @ axes[0]
    axis = _canonical_axis_sign(proj, axes[0])
    proj = points @ axis
    t0, t1 = float(proj.min()), float(proj.max())
    base = centroid - float(axis @ centroid) * axis  # foot of the line at proj 0
    fractions = np.linspace(t0, t1, 4)
    return base + np.outer(fractions, axis)


def fit_chain(
    cluster: BranchCluster,
    cfg: Optional[FitConfig] = None,
    fallback_radius: Optional[float] = None,
) -> SegmentChain:
    """Fit the 4-control-point piecewise-linear axis of a branch cluster.

    Sparse clusters (fewer than ``cfg.min_points_full_fit`` points) use a
    straight-line fit subdivided into three segments; a full fit that turns
    out rank-deficient degrades the same way. When the cluster is too flat
    for radius estimation, ``fallback_radius`` is used if given, otherwise
    the error propagates.
    """
    cfg = cfg or FitConfig()
    points = cluster.points
    if len(points) < 2:
        raise DegenerateClusterError("chain fit needs at least 2 points")
    if np.allclose(points, points[0], atol=0.0, rtol=0.0):
        raise DegenerateClusterError("all cluster points coincide")

    try:
        radius = estimate_radius(cluster)
    except DegenerateClusterError:
        if fallback_radius is None:
            raise
        radius = float(fallback_radius)

    if len(points) < cfg.min_points_full_fit:
        cp = _line_fallback_control_points(points)
        return SegmentChain(cp, radius=radius, confidence=cluster.confidence)

    _, axes, _ = _principal_axes(points)
    proj = points @ axes[0]
    axis = _canonical_axis_sign(proj, axes[0])
    proj = points @ axis
    # order along the main axis; ties resolved by coordinates so the fit
    # does not depend on input point order
    order = np.lexsort((points[:, 2], points[:, 1], points[:, 0], proj))
    ordered = points[order]

    chords = np.linalg.norm(np.diff(ordered, axis=0), axis=1)
    total = float(chords.sum())
    if total <= 0.0:
        raise DegenerateClusterError("all cluster points coincide")
    u = np.concatenate(([0.0], np.cumsum(chords))) / total

    basis = chain_basis_matrix(u)
    solution, _, rank, _ = np.linalg.lstsq(basis, ordered, rcond=None)
    if rank < 4:
        cp = _line_fallback_control_points(points)
        return SegmentChain(cp, radius=radius, confidence=cluster.confidence)

    cp = solution
    # orient so the chain starts at the low end of the main axis
    if cp[0] @ axis > cp[-1] @ axis:
        cp = cp[::-1].copy()
    return SegmentChain(cp, radius=radius, confidence=cluster.confidence)
