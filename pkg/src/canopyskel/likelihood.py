"""Skeleton-occupancy likelihood grid.

Each fitted branch segment deposits an ellipsoidal probability kernel into
a voxel grid: full confidence on the segment itself, decaying axially and
radially, zero outside an ellipsoid whose semi-axes are ``k`` segment
lengths and ``k`` radii. Contributions from independent observations are
fused per voxel as complementary probabilities, so evidence accumulates
monotonically and the result does not depend on observation order.

Voxels are addressed by integer index triples; a probability of zero means
"no evidence", and such cells are never reported as stored. Storage is a
dense array over the (pre-sized) grid bounds, which keeps fusion fully
vectorized; the sparse view of the world is preserved at the interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import LineSegment, SegmentChain, segment_distances_batch

__all__ = [
    "GridSpec",
    "LikelihoodGrid",
    "EllipsoidKernelConfig",
    "observed_prob",
    "observed_prob_batch",
    "fuse",
    "apply_observation",
    "accumulate",
    "grid_spec_for_chains",
    "traverse_voxels",
    "MIN_STORED_PROBABILITY",
]

# contributions below this are treated as no evidence and never stored
MIN_STORED_PROBABILITY = 1e-9


@dataclass
class GridSpec:
    """Geometry of the voxel grid: where it sits and how fine it is."""

    origin: np.ndarray  # (3,) lower corner, meters
    voxel_size: float  # > 0, meters
    dims: Tuple[int, int, int]  # voxel counts per axis, each >= 1

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.origin)):
            raise ValueError("grid origin must be finite")
        self.voxel_size = float(self.voxel_size)
        if not (self.voxel_size > 0.0 and np.isfinite(self.voxel_size)):
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        self.dims = dims

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def voxel_of(self, points: np.ndarray) -> np.ndarray:
        """Integer voxel index containing each point (may be out of bounds)."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.floor((pts - self.origin) / self.voxel_size).astype(np.int64)

    def center_of(self, indices: np.ndarray) -> np.ndarray:
        """World-frame center of each voxel index."""
        idx = np.asarray(indices, dtype=np.float64).reshape(-1, 3)
        return self.origin + (idx + 0.5) * self.voxel_size

    def in_bounds(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)


@dataclass
class EllipsoidKernelConfig:
    """Decay-rate factor of the segment kernel.

    Larger k flattens the falloff, which widens the region of positive
    probability: the support ellipsoid has semi-axes k*length axially and
    k*radius radially.
    """

    k: float = 3.0

    def __post_init__(self) -> None:
        self.k = float(self.k)
        if not (self.k > 0.0 and np.isfinite(self.k)):
            raise ValueError(f"kernel k must be positive, got {self.k}")


class LikelihoodGrid:
    """Voxel grid of skeleton-occupancy probabilities in [0, 1].

    Absent cells mean probability 0; every stored value is in
    [MIN_STORED_PROBABILITY, 1].

    Values are stored directly as probabilities. Heavily observed voxels
    therefore round to exactly 1.0 after a few dozen fusions; this is
    deliberate — the path-cost formula -log(p) turns those into exact-zero
    edge costs, and the path search then resolves ties among fully
    certain corridors by path length.
    """

    def __init__(self, spec: GridSpec, values: Optional[np.ndarray] = None):
        self.spec = spec
        if values is None:
            self._p = np.zeros(spec.dims, dtype=np.float64)
        else:
            values = np.asarray(values, dtype=np.float64)
            if values.shape != spec.dims:
                raise ValueError(
                    f"values shape {values.shape} does not match dims {spec.dims}"
                )
            if np.any((values < 0.0) | (values > 1.0)):
                raise ValueError("probabilities must lie in [0, 1]")
            self._p = values.copy()
            self._p[values < MIN_STORED_PROBABILITY] = 0.0

    @property
    def n_stored(self) -> int:
        return int(np.count_nonzero(self._p > 0.0))

    def probability(self, index: Sequence[int]) -> float:
        """p at one voxel index; 0 for anything absent or out of bounds."""
        idx = np.asarray(index, dtype=np.int64).reshape(3)
        if np.any(idx < 0) or np.any(idx >= np.array(self.spec.dims)):
            return 0.0
        return float(self._p[tuple(idx)])

    def probabilities_at(self, indices: np.ndarray) -> np.ndarray:
        """Vectorized probability lookup; out-of-bounds indices give 0."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        result = np.zeros(len(idx), dtype=np.float64)
        ok = self.spec.in_bounds(idx)
        if np.any(ok):
            sel = idx[ok]
            result[ok] = self._p[sel[:, 0], sel[:, 1], sel[:, 2]]
        return result

    def stored(self) -> Tuple[np.ndarray, np.ndarray]:
        """All cells with positive probability: (indices (M, 3), values (M,)).

        Indices come out in lexicographic order, so iteration is
        deterministic.
        """
        idx = np.argwhere(self._p > 0.0)
        vals = self._p[idx[:, 0], idx[:, 1], idx[:, 2]]
        return idx.astype(np.int64), vals

    def items(self) -> Iterator[Tuple[Tuple[int, int, int], float]]:
        idx, vals = self.stored()
        for row, p in zip(idx, vals):
            yield (int(row[0]), int(row[1]), int(row[2])), float(p)

    def copy(self) -> "LikelihoodGrid":
        dup = LikelihoodGrid(self.spec)
        dup._p = self._p.copy()
        return dup

    def _fuse_flat(self, flat_indices: np.ndarray, p_obs: np.ndarray) -> None:
        """Fuse contributions into internal storage (flat voxel indices).

        flat_indices must not contain repeats within one call. The update
        p <- 1 - (1 - p)(1 - p_obs) keeps a vacuous prior exact (p = 0
        fuses to exactly p_obs would need Sterbenz, so zeros are handled
        by direct assignment) and saturates to exactly 1.0 under enough
        evidence.
        """
        flat = self._p.reshape(-1)
        prior = flat[flat_indices]
        fused = 1.0 - (1.0 - prior) * (1.0 - p_obs)
        vacuous = prior == 0.0
        if np.any(vacuous):
            fused = np.where(vacuous, p_obs, fused)
        flat[flat_indices] = fused


def fuse(p_prior: float, p_obs: float) -> float:
    """Combine two independent occupancy probabilities.

    Complementary product: 1 - (1 - p_prior)(1 - p_obs). Commutative,
    associative, monotone, and never leaves [0, 1]. The vacuous-prior and
    certainty cases short-circuit so they are exact, not merely close.
    """
    p_prior = float(p_prior)
    p_obs = float(p_obs)
    if not (0.0 <= p_prior <= 1.0 and 0.0 <= p_obs <= 1.0):
        raise ValueError(f"probabilities must be in [0, 1], got {p_prior}, {p_obs}")
    if p_prior == 0.0:
        return p_obs
    if p_obs == 0.0:
        return p_prior
    if p_prior == 1.0 or p_obs == 1.0:
        return 1.0
    return 1.0 - (1.0 - p_prior) * (1.0 - p_obs)


def observed_prob_batch(
    seg: LineSegment, points: np.ndarray, k: float
) -> np.ndarray:
    """Kernel value of one segment at many query points.

    max(0, c - (c/k) * sqrt((d_axial/length)^2 + (d_radial/radius)^2)),
    evaluated as c * (1 - s/k) so the support boundary lands exactly on 0.
    """
    d_ax, d_rad = segment_distances_batch(points, seg.a, seg.b)
    s = np.sqrt((d_ax / seg.length) ** 2 + (d_rad / seg.radius) ** 2)
    return np.where(s >= k, 0.0, seg.confidence * (1.0 - s / k))


def observed_prob(
    seg: LineSegment, voxel_center, cfg: Optional[EllipsoidKernelConfig] = None
) -> float:
    """One voxel's observed probability from one segment (see batch form)."""
    cfg = cfg or EllipsoidKernelConfig()
    center = np.asarray(voxel_center, dtype=np.float64).reshape(1, 3)
    return float(observed_prob_batch(seg, center, cfg.k)[0])


def traverse_voxels(spec: GridSpec, a, b) -> np.ndarray:
    """All in-bounds voxels a segment passes through, as (M, 3) indices.

    Standard incremental grid traversal: clip the segment against the grid
    box, then step one voxel face at a time in order of the parametric
    crossing values. A segment that merely grazes the grid yields the voxels
    of its clipped portion; one that misses entirely yields an empty array.
    """
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    h = spec.voxel_size
    dims = np.array(spec.dims, dtype=np.int64)
    lo = spec.origin
    hi = spec.origin + dims * h
    d = b - a

    # clip parameter range [t0, t1] to the grid box (slab method)
    t0, t1 = 0.0, 1.0
    for ax in range(3):
        if d[ax] == 0.0:
            if a[ax] < lo[ax] or a[ax] > hi[ax]:
                return np.empty((0, 3), dtype=np.int64)
        else:
            ta = (lo[ax] - a[ax]) / d[ax]
            tb = (hi[ax] - a[ax]) / d[ax]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
    if t0 > t1:
        return np.empty((0, 3), dtype=np.int64)

    start = a + t0 * d
    voxel = np.floor((start - lo) / h).astype(np.int64)
    np.clip(voxel, 0, dims - 1, out=voxel)

    step = np.sign(d).astype(np.int64)
    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for ax in range(3):
        if d[ax] != 0.0:
            next_boundary = lo[ax] + (voxel[ax] + (1 if step[ax] > 0 else 0)) * h
            t_max[ax] = (next_boundary - a[ax]) / d[ax]
            t_delta[ax] = h / abs(d[ax])

    out: List[Tuple[int, int, int]] = []
    guard = int(dims.sum()) + 6  # a segment crosses at most sum(dims) faces
    for _ in range(guard):
        out.append((int(voxel[0]), int(voxel[1]), int(voxel[2])))
        ax = int(np.argmin(t_max))
        if t_max[ax] > t1:
            break
        voxel[ax] += step[ax]
        if voxel[ax] < 0 or voxel[ax] >= dims[ax]:
            break
        t_max[ax] += t_delta[ax]
    return np.array(out, dtype=np.int64)


def _segment_support_box(seg: LineSegment, k: float) -> Tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds of the region where the kernel is positive.

    Per axis, the reach beyond the segment's own box is the largest
    component of (alpha*k*l*u + beta*k*r*w) over unit (alpha, beta) and
    w perpendicular to the axis direction u.
    """
    u = seg.direction
    reach_axial = k * seg.length * np.abs(u)
    reach_radial = k * seg.radius * np.sqrt(np.maximum(0.0, 1.0 - u**2))
    pad = np.sqrt(reach_axial**2 + reach_radial**2)
    lo = np.minimum(seg.a, seg.b) - pad
    hi = np.maximum(seg.a, seg.b) + pad
    return lo, hi


def apply_observation(
    grid: LikelihoodGrid,
    chain: SegmentChain,
    cfg: Optional[EllipsoidKernelConfig] = None,
) -> LikelihoodGrid:
    """Rasterize one fitted chain into the grid (in place) and return it.

    Each of the three segments is processed independently: every voxel
    center inside the kernel support gets the kernel value, voxels the
    segment actually passes through get the full confidence (even if their
    centers sit off the line), and the result is fused with the current
    grid. Portions outside the grid contribute nothing.
    """
    cfg = cfg or EllipsoidKernelConfig()
    spec = grid.spec
    dims = np.array(spec.dims, dtype=np.int64)

    for seg in chain.segments:
        lo, hi = _segment_support_box(seg, cfg.k)
        ilo = np.floor((lo - spec.origin) / spec.voxel_size).astype(np.int64)
        ihi = np.floor((hi - spec.origin) / spec.voxel_size).astype(np.int64)
        if np.any(ihi < 0) or np.any(ilo >= dims):
            continue
        ilo = np.maximum(ilo, 0)
        ihi = np.minimum(ihi, dims - 1)

        sub_dims = ihi - ilo + 1
        gx, gy, gz = np.meshgrid(
            np.arange(ilo[0], ihi[0] + 1),
            np.arange(ilo[1], ihi[1] + 1),
            np.arange(ilo[2], ihi[2] + 1),
            indexing="ij",
        )
        idx = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        centers = spec.center_of(idx)
        p_obs = observed_prob_batch(seg, centers, cfg.k)

        # voxels the segment passes through hold the full confidence
        traversed = traverse_voxels(spec, seg.a, seg.b)
        if len(traversed):
            offs = traversed - ilo
            flat_local = np.ravel_multi_index(
                (offs[:, 0], offs[:, 1], offs[:, 2]), tuple(sub_dims)
            )
            p_obs[flat_local] = seg.confidence

        keep = p_obs >= MIN_STORED_PROBABILITY
        if not np.any(keep):
            continue
        kept_idx = idx[keep]
        flat = np.ravel_multi_index(
            (kept_idx[:, 0], kept_idx[:, 1], kept_idx[:, 2]), spec.dims
        )
        grid._fuse_flat(flat, p_obs[keep])
    return grid


def accumulate(
    grid: LikelihoodGrid,
    chains: Sequence[SegmentChain],
    cfg: Optional[EllipsoidKernelConfig] = None,
) -> LikelihoodGrid:
    """Fuse a whole set of observations; order does not matter."""
    cfg = cfg or EllipsoidKernelConfig()
    for chain in chains:
        apply_observation(grid, chain, cfg)
    return grid


def grid_spec_for_chains(
    chains: Sequence[SegmentChain],
    voxel_size: float,
    cfg: Optional[EllipsoidKernelConfig] = None,
) -> GridSpec:
    """Grid bounds covering every chain's kernel support.

    Union of the chain bounding boxes, each padded by the largest of its
    segments' support reaches (k*length axially, k*radius radially); the
    padding bound holds because the support of each segment lies within
    max(k*l, k*r) of the segment in every axis.
    """
    if not chains:
        raise ValueError("cannot size a grid for zero chains")
    voxel_size = float(voxel_size)
    if voxel_size <= 0.0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    cfg = cfg or EllipsoidKernelConfig()

    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for chain in chains:
        pad = max(
            max(cfg.k * seg.length, cfg.k * seg.radius) for seg in chain.segments
        )
        cp = chain.control_points
        lo = np.minimum(lo, cp.min(axis=0) - pad)
        hi = np.maximum(hi, cp.max(axis=0) + pad)

    dims = np.maximum(1, np.ceil((hi - lo) / voxel_size).astype(np.int64))
    return GridSpec(origin=lo, voxel_size=voxel_size, dims=tuple(int(d) for d in dims))
