"""Procedural ground-truth trees and simulated occluded observations.

A tree is grown recursively: a near-vertical trunk, then children
branching off each tip at sampled angles with geometrically decaying
length and radius. The centerline graph, densely sampled with true radii,
is the ground truth.

Observations mimic a one-sided depth capture of that tree: points are
sampled on the branch cylinder surfaces on the half facing a virtual
viewpoint, spherical occluders carve out foliage-like holes, the surviving
points are split into slender per-branch clusters (broken at forks, at
occlusion gaps, and into length-capped pieces), perturbed with bounded
Gaussian noise, and given a per-cluster confidence score. Everything is
driven by explicit seeds, so identical parameters reproduce identical
bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .geometry import BranchCluster, Provenance, SkeletonGraph, SkeletonVertex

__all__ = [
    "TreeGenParams",
    "OcclusionParams",
    "GroundTruthSkeleton",
    "generate_tree",
    "simulate_observations",
    "foliage_occluders",
    "default_viewpoint",
    "GT_SAMPLE_SPACING",
]

GT_SAMPLE_SPACING = 0.01  # meters between ground-truth centerline samples

_OCCLUDERS_PER_LEVEL_VOLUME = 15.0  # occluders per density level per m^3
_MIN_CLUSTER_POINTS = 4  # emitted clusters carry at least this many points
_GAP_SPLIT_LENGTH = 0.02  # arc gap that breaks a cluster run, meters
_TRUNK_MAX_TILT_DEG = 5.0
_AZIMUTH_JITTER_RAD = 0.3
_GROWTH_TRIES = 8
_CLEARANCE_BASE = 0.02
_CLEARANCE_PER_RADIUS = 1.5
_FORK_EXEMPT_ARC = 0.12


@dataclass
class TreeGenParams:
    rng_seed: int = 0
    depth: int = 4
    children_per_branch: Tuple[int, int] = (2, 4)
    branch_length_decay: float = 0.7
    branch_radius_decay: float = 0.6
    trunk_length: float = 1.0
    trunk_radius: float = 0.05
    branching_angle_deg: Tuple[float, float] = (20.0, 60.0)

    def __post_init__(self) -> None:
        self.rng_seed = int(self.rng_seed)
        self.depth = int(self.depth)
        self.children_per_branch = (
            int(self.children_per_branch[0]),
            int(self.children_per_branch[1]),
        )
        self.branching_angle_deg = (
            float(self.branching_angle_deg[0]),
            float(self.branching_angle_deg[1]),
        )
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        lo, hi = self.children_per_branch
        if not (1 <= lo <= hi):
            raise ValueError(f"bad children_per_branch range ({lo}, {hi})")
        if not (0.0 < self.branch_length_decay < 1.0):
            raise ValueError("branch_length_decay must be in (0, 1)")
        if not (0.0 < self.branch_radius_decay < 1.0):
            raise ValueError("branch_radius_decay must be in (0, 1)")
        if not (self.trunk_length > 0.0 and self.trunk_radius > 0.0):
            raise ValueError("trunk dimensions must be positive")
        alo, ahi = self.branching_angle_deg
        if not (0.0 < alo <= ahi < 180.0):
            raise ValueError(f"bad branching_angle_deg range ({alo}, {ahi})")


@dataclass
class OcclusionParams:
    rng_seed: int = 0
    foliage_density_level: int = 1
    occluder_radius: Tuple[float, float] = (0.05, 0.20)
    surface_point_density: float = 10000.0  # points per m^2 of visible surface
    point_noise_sigma: float = 0.002
    confidence_range: Tuple[float, float] = (0.6, 0.99)
    max_cluster_length: float = 0.25

    def __post_init__(self) -> None:
        self.rng_seed = int(self.rng_seed)
        self.foliage_density_level = int(self.foliage_density_level)
        self.occluder_radius = (
            float(self.occluder_radius[0]),
            float(self.occluder_radius[1]),
        )
        self.confidence_range = (
            float(self.confidence_range[0]),
            float(self.confidence_range[1]),
        )
        if self.foliage_density_level not in (1, 2, 3, 4):
            raise ValueError("foliage_density_level must be 1..4")
        rlo, rhi = self.occluder_radius
        if not (0.0 < rlo <= rhi):
            raise ValueError(f"bad occluder_radius range ({rlo}, {rhi})")
        if not (self.surface_point_density > 0.0):
            raise ValueError("surface_point_density must be positive")
        if not (self.point_noise_sigma >= 0.0):
            raise ValueError("point_noise_sigma must be >= 0")
        clo, chi = self.confidence_range
        if not (0.0 < clo <= chi <= 1.0):
            raise ValueError(f"bad confidence_range ({clo}, {chi})")
        if not (self.max_cluster_length > 0.0):
            raise ValueError("max_cluster_length must be positive")

    def occluder_count(self, canopy_volume: float) -> int:
        """Occluder count scales with density level and canopy volume."""
        return int(round(_OCCLUDERS_PER_LEVEL_VOLUME
                         * self.foliage_density_level * canopy_volume))


@dataclass
class GroundTruthSkeleton:
    """Known true skeleton plus which branch each run of vertices forms.

    `branch_vertices[b]` lists vertex ids in base-to-tip order; the first
    entry is shared with the parent branch (it is the parent's tip), so
    consecutive pairs are exactly the centerline edges of that branch.
    """

    graph: SkeletonGraph
    branch_vertices: List[List[int]] = field(default_factory=list)

    @property
    def n_branches(self) -> int:
        return len(self.branch_vertices)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        pos = self.graph.positions()
        return pos.min(axis=0), pos.max(axis=0)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _perpendicular_basis(direction: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors spanning the plane orthogonal to `direction`."""
    ref = np.array([1.0, 0.0, 0.0])
    if abs(direction @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(direction, ref))
    e2 = np.cross(direction, e1)
    return e1, e2


def _tilted(direction: np.ndarray, angle_rad: float, azimuth_rad: float) -> np.ndarray:
    e1, e2 = _perpendicular_basis(direction)
    lateral = np.cos(azimuth_rad) * e1 + np.sin(azimuth_rad) * e2
    return _unit(np.cos(angle_rad) * direction + np.sin(angle_rad) * lateral)


def generate_tree(params: TreeGenParams) -> GroundTruthSkeleton:
    """Grow one tree and sample its centerline densely.

    Depth-first recursion with all randomness drawn from a single seeded
    generator, so the same parameters always produce the same tree.
    """
    rng = np.random.default_rng(params.rng_seed)

    vertices: List[SkeletonVertex] = []
    edges: List[Tuple[int, int]] = []
    branch_vertices: List[List[int]] = []
    chords: List[Tuple[np.ndarray, np.ndarray, float]] = []

    def add_vertex(position: np.ndarray, radius: float) -> int:
        vertices.append(SkeletonVertex(position, radius, Provenance.OBSERVED))
        return len(vertices) - 1

    def clearance_margin(fork: np.ndarray, direction: np.ndarray,
                         length: float, radius: float) -> float:
        """Worst gap-to-threshold margin of a candidate chord vs grown wood.

        Proximity inside `_FORK_EXEMPT_ARC` of the fork is exempt — the
        parent and freshly forked siblings are legitimately close there.
        """
        if not chords:
            return np.inf
        arcs = np.arange(GT_SAMPLE_SPACING, length + 1e-12, 2 * GT_SAMPLE_SPACING)
        x = fork[None, :] + arcs[:, None] * direction[None, :]
        a = np.stack([c[0] for c in chords])
        ab = np.stack([c[1] for c in chords]) - a
        sq = np.einsum("cd,cd->c", ab, ab)
        t = np.einsum("scd,cd->sc", x[:, None, :] - a[None], ab)
        t = np.clip(t / np.maximum(sq, 1e-18), 0.0, 1.0)
        nearest = a[None] + t[..., None] * ab[None]
        gap = np.linalg.norm(x[:, None, :] - nearest, axis=2)
        thresh = _CLEARANCE_BASE + _CLEARANCE_PER_RADIUS * (
            radius + np.array([c[2] for c in chords])
        )
        exempt = (arcs[:, None] < _FORK_EXEMPT_ARC) | (
            np.linalg.norm(nearest - fork[None, None, :], axis=2) < _FORK_EXEMPT_ARC
        )
        return float(np.where(exempt, np.inf, gap - thresh[None, :]).min())

    def grow(base_id: int, base: np.ndarray, direction: np.ndarray,
             length: float, radius: float, level: int) -> None:
        n_seg = max(1, int(np.ceil(length / GT_SAMPLE_SPACING - 1e-12)))
        ts = np.linspace(0.0, 1.0, n_seg + 1)[1:]
        ids = [base_id]
        for t in ts:
            vid = add_vertex(base + t * length * direction, radius)
            edges.append((ids[-1], vid))
            ids.append(vid)
        branch_vertices.append(ids)
        chords.append((base, base + length * direction, radius))

        if level >= params.depth:
            return
        tip = base + length * direction
        lo, hi = params.children_per_branch
        n_children = int(rng.integers(lo, hi + 1))
        alo, ahi = np.deg2rad(params.branching_angle_deg)
        child_len = length * params.branch_length_decay
        child_rad = radius * params.branch_radius_decay
        # Siblings share the light around their fork, so their azimuths are
        # spread evenly with jitter instead of drawn independently; truly
        # independent draws routinely emit near-parallel twin twigs, which
        # real crowns prune away.  Each shoot is also resampled away from
        # already-grown wood (self-pruning): candidates whose chord passes
        # within the clearance threshold of an existing branch are redrawn,
        # keeping the least-crowded direction if every try collides.
        phase = rng.uniform(0.0, 2.0 * np.pi)
        for k in range(n_children):
            best_dir, best_margin = None, -np.inf
            for _ in range(_GROWTH_TRIES):
                angle = rng.uniform(alo, ahi)
                azimuth = (
                    phase
                    + 2.0 * np.pi * k / n_children
                    + rng.normal(0.0, _AZIMUTH_JITTER_RAD)
                )
                cand = _tilted(direction, angle, azimuth)
                margin = clearance_margin(tip, cand, child_len, child_rad)
                if margin > best_margin:
                    best_dir, best_margin = cand, margin
                if margin >= 0.0:
                    break
            grow(ids[-1], tip, best_dir, child_len, child_rad, level + 1)

    tilt = np.deg2rad(rng.uniform(0.0, _TRUNK_MAX_TILT_DEG))
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    trunk_dir = _tilted(np.array([0.0, 0.0, 1.0]), tilt, azimuth)
    root = add_vertex(np.zeros(3), params.trunk_radius)
    grow(root, np.zeros(3), trunk_dir, params.trunk_length,
         params.trunk_radius, 1)

    return GroundTruthSkeleton(SkeletonGraph(vertices, edges), branch_vertices)


def default_viewpoint(gt: GroundTruthSkeleton) -> np.ndarray:
    """A camera position well off to the side of the canopy."""
    lo, hi = gt.bounding_box()
    center = (lo + hi) / 2.0
    diag = float(np.linalg.norm(hi - lo))
    return center + np.array([1.5 * diag + 1.0, 0.0, 0.0])


def foliage_occluders(
    gt: GroundTruthSkeleton, params: OcclusionParams, rng: np.random.Generator
) -> List[Tuple[np.ndarray, float]]:
    """Random occluding spheres anchored to foliage-bearing branches.

    Leaves cluster along the distal stretch of terminal shoots, so anchors
    are drawn from terminal twigs with probability rising steeply (cubed
    arc fraction) toward the tip; interior scaffold wood and fork points
    stay visible the way they do in real canopies, where foliage hangs
    off the outer crown.
    The sphere surface is kept within a few centimeters of the anchored
    twig — displaced outward so it usually shadows the twig from some
    viewing directions and occasionally swallows a short chord of it —
    rather than scaling the displacement with the sphere, which would let
    large occluders drift onto unrelated limbs.  The count scales with
    density level and canopy volume (convex hull of the centerline), so
    occlusion severity is comparable across tree sizes.
    """
    pos = gt.graph.positions()
    radii = gt.graph.radii()
    rlo, rhi = params.occluder_radius
    try:
        volume = float(ConvexHull(pos).volume)
    except QhullError:
        # Degenerate crown (a single straight branch, say): fall back to a
        # bounding box fattened to the occluder scale.
        lo, hi = gt.bounding_box()
        volume = float(np.prod(np.maximum(hi - lo, 2.0 * rhi)))
    count = params.occluder_count(volume)

    bases = {br[0] for br in gt.branch_vertices if br}
    anchor_ids: List[int] = []
    anchor_weights: List[float] = []
    for br in gt.branch_vertices:
        if len(br) < 2 or br[-1] in bases:
            continue  # a fork sprouts from this tip: scaffold, not a shoot
        arc = np.concatenate(
            [[0.0], np.cumsum(np.linalg.norm(np.diff(pos[br], axis=0), axis=1))]
        )
        if arc[-1] <= 0.0:
            continue
        anchor_ids.extend(br[1:])  # skip the base, shared with the parent
        anchor_weights.extend((arc[1:] / arc[-1]) ** 3)
    if anchor_ids:
        eligible = np.asarray(anchor_ids)
        weights = np.asarray(anchor_weights)
        weights = weights / weights.sum()
    else:  # degenerate crown with no terminal runs: fall back to thin wood
        eligible = np.flatnonzero(radii <= np.percentile(radii, 60.0))
        if len(eligible) == 0:
            eligible = np.arange(len(pos))
        weights = np.full(len(eligible), 1.0 / len(eligible))

    out: List[Tuple[np.ndarray, float]] = []
    for _ in range(count):
        anchor = pos[eligible[int(rng.choice(len(eligible), p=weights))]]
        radius = float(rng.uniform(rlo, rhi))
        direction = rng.normal(size=3)
        norm = float(np.linalg.norm(direction))
        if norm > 0.0:
            direction /= norm
        else:
            direction = np.array([1.0, 0.0, 0.0])
        center = anchor + direction * (radius + rng.uniform(-0.02, 0.04))
        out.append((center, radius))
    return out


def simulate_observations(
    gt: GroundTruthSkeleton,
    params: OcclusionParams,
    viewpoint: Optional[np.ndarray] = None,
    occluders: Optional[Sequence[Tuple[np.ndarray, float]]] = None,
    viewpoints: Optional[Sequence[np.ndarray]] = None,
) -> Tuple[List[BranchCluster], np.ndarray]:
    """One simulated capture: branch clusters plus the occlusion record.

    Returns the clusters a segmentation front-end would hand over and a
    per-ground-truth-vertex boolean that is true exactly where the capture
    generated surface points but occluders swallowed all of them.

    `viewpoint` overrides the virtual camera position; `viewpoints` takes
    several camera positions instead and pools each branch's surface
    points across all of them before clustering, the way a registered
    multi-scan survey would. Pooling matters: a single camera only sees
    one half of every branch, so clusters fit to one capture sit off the
    branch axis by a fraction of the radius, while the pooled ring of
    points is centered on it. `occluders` overrides the random spheres
    with explicit (center, radius) pairs — with it, results stay
    deterministic under the same seed while the occlusion geometry is
    under test control.
    """
    rng = np.random.default_rng(params.rng_seed)
    pos = gt.graph.positions()
    radii = gt.graph.radii()
    n_gt = len(pos)
    if viewpoints is not None:
        views = [np.asarray(v, dtype=np.float64).reshape(3) for v in viewpoints]
        if not views:
            raise ValueError("viewpoints must contain at least one position")
    else:
        if viewpoint is None:
            viewpoint = default_viewpoint(gt)
        views = [np.asarray(viewpoint, dtype=np.float64).reshape(3)]

    if occluders is None:
        occluders = foliage_occluders(gt, params, rng)
    else:
        occluders = [
            (np.asarray(c, dtype=np.float64).reshape(3), float(r))
            for c, r in occluders
        ]

    # --- surface points on the camera-facing half of each branch --------
    # Every camera contributes an independent half-cylinder sampling; with
    # several viewpoints one branch accumulates the union of its visible
    # halves, which for an off-axis ring of cameras closes the full ring.
    points: List[np.ndarray] = []
    point_branch: List[np.ndarray] = []
    point_arc: List[np.ndarray] = []
    point_vertex: List[np.ndarray] = []

    for b, ids in enumerate(gt.branch_vertices):
        arc = 0.0
        for va, vb in zip(ids[:-1], ids[1:]):
            a, bb = pos[va], pos[vb]
            seg = bb - a
            seg_len = float(np.linalg.norm(seg))
            if seg_len <= 0.0:
                continue
            u = seg / seg_len
            r = float(radii[vb])
            for cam in views:
                n_pts = int(rng.poisson(params.surface_point_density
                                        * np.pi * r * seg_len))
                if n_pts == 0:
                    continue
                toward = cam - (a + bb) / 2.0
                w = toward - (toward @ u) * u
                norm_w = np.linalg.norm(w)
                if norm_w < 1e-12:
                    w = _perpendicular_basis(u)[0]
                else:
                    w = w / norm_w
                w2 = np.cross(u, w)

                t = rng.uniform(0.0, seg_len, n_pts)
                phi = rng.uniform(-np.pi / 2.0, np.pi / 2.0, n_pts)
                normal = np.outer(np.cos(phi), w) + np.outer(np.sin(phi), w2)
                points.append(a + np.outer(t, u) + r * normal)
                point_branch.append(np.full(n_pts, b, dtype=np.int64))
                point_arc.append(arc + t)
                point_vertex.append(np.where(t < seg_len / 2.0, va, vb))
            arc += seg_len

    occluded_mask = np.zeros(n_gt, dtype=bool)
    if not points:
        return [], occluded_mask

    pts = np.concatenate(points)
    branch_of = np.concatenate(point_branch)
    arc_of = np.concatenate(point_arc)
    vertex_of = np.concatenate(point_vertex)

    # --- occluders swallow everything inside them ------------------------
    surviving = np.ones(len(pts), dtype=bool)
    if occluders:
        tree = cKDTree(pts)
        for center, radius in occluders:
            inside = tree.query_ball_point(center, radius)
            surviving[inside] = False

    generated = np.bincount(vertex_of, minlength=n_gt)
    kept = np.bincount(vertex_of[surviving], minlength=n_gt)
    occluded_mask = (generated > 0) & (kept == 0)

    # --- split survivors into slender clusters ---------------------------
    # The noise vector's norm is capped at 3 sigma, which keeps every
    # emitted point within (surface radius + 3 sigma) of its source
    # centerline segment.
    noise = rng.normal(0.0, params.point_noise_sigma, size=(len(pts), 3))
    if params.point_noise_sigma > 0.0:
        bound = 3.0 * params.point_noise_sigma
        norms = np.linalg.norm(noise, axis=1, keepdims=True)
        noise *= np.minimum(1.0, bound / np.maximum(norms, 1e-300))

    cluster_slices: List[np.ndarray] = []
    for b in range(gt.n_branches):
        sel = np.where(surviving & (branch_of == b))[0]
        if not len(sel):
            continue
        sel = sel[np.argsort(arc_of[sel], kind="stable")]
        arcs = arc_of[sel]
        breaks = np.where(np.diff(arcs) > _GAP_SPLIT_LENGTH)[0] + 1
        for run in np.split(sel, breaks):
            run_arcs = arc_of[run]
            span = float(run_arcs[-1] - run_arcs[0])
            n_pieces = max(1, int(np.ceil(span / params.max_cluster_length)))
            if n_pieces == 1:
                cluster_slices.append(run)
                continue
            bounds = run_arcs[0] + span * np.arange(1, n_pieces) / n_pieces
            piece_of = np.searchsorted(bounds, run_arcs, side="right")
            for p in range(n_pieces):
                piece = run[piece_of == p]
                if len(piece):
                    cluster_slices.append(piece)

    clusters: List[BranchCluster] = []
    for sel in cluster_slices:
        if len(sel) < _MIN_CLUSTER_POINTS:
            continue
        confidence = float(rng.uniform(*params.confidence_range))
        clusters.append(
            BranchCluster(
                points=pts[sel] + noise[sel],
                confidence=confidence,
                cluster_id=len(clusters),
            )
        )
    return clusters, occluded_mask
