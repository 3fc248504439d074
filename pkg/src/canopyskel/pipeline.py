"""End-to-end runs: fit, accumulate, sample, smooth, join, score.

This module glues the stages together for one tree and provides the
dataset-level sweep used by the command line: generate N trees at several
occlusion levels, skeletonize each with any of the joining methods, and
score everything into report rows. Per-tree work is self-contained and
seed-deterministic, so trees can be processed in parallel worker
processes without changing any output.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import formats
from .baselines import bridging_vertex_mask, ftsem_baseline, mst_baseline
from .config import METHODS, PipelineConfig
from .evaluation import EvalReport, label_vertices
from .geometry import BranchCluster, SegmentChain, SkeletonGraph
from .likelihood import LikelihoodGrid, accumulate, grid_spec_for_chains
from .segment_fit import DegenerateClusterError, fit_chain
from .skeleton import (
    build_initial_graph,
    build_likelihood_graph,
    join_subgraphs,
    laplacian_smooth,
    sample_vertices,
)
from .synthgen import (
    GroundTruthSkeleton,
    foliage_occluders,
    generate_tree,
    simulate_observations,
)

__all__ = [
    "InvariantViolation",
    "SkeletonizeResult",
    "fit_clusters",
    "extract_skeleton",
    "synthesize_tree",
    "synthesize_dataset",
    "skeletonize_tree_dir",
    "evaluate_tree_dir",
    "find_tree_dirs",
    "tree_dir_name",
    "derive_seed",
]

log = logging.getLogger(__name__)

CLUSTERS_FILE = "clusters.txt"
GT_FILE = "gt_skeleton.txt"
MASK_FILE = "occlusion_mask.txt"


class InvariantViolation(RuntimeError):
    """The pipeline produced something that breaks its own guarantees."""


def derive_seed(*parts: int) -> int:
    """Stable child seed from a master seed and integer coordinates."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class SkeletonizeResult:
    skeleton: SkeletonGraph
    grid: Optional[LikelihoodGrid]
    chains: List[SegmentChain]
    n_initial_components: int


def fit_clusters(clusters: Sequence[BranchCluster], config: PipelineConfig) -> List[SegmentChain]:
    """Fit every cluster, dropping the degenerate ones with a log note."""
    chains: List[SegmentChain] = []
    for cluster in clusters:
        try:
            chains.append(
                fit_chain(cluster, config.fit, fallback_radius=config.voxel_size)
            )
        except DegenerateClusterError as exc:
            log.debug("skipping cluster %d: %s", cluster.cluster_id, exc)
    return chains



def extract_skeleton(
    clusters: Sequence[BranchCluster],
    config: PipelineConfig,
    method: str = "likelihood",
) -> SkeletonizeResult:
    """Run the full per-tree pipeline with the chosen joining method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if not clusters:
        raise ValueError("no clusters to skeletonize")

    chains = fit_clusters(clusters, config)
    if not chains:
        raise ValueError("every cluster was degenerate; nothing to fit")

    # Oversample to half the voxel size: smoothing shifts interior vertices,
    # and a run sampled right at the voxel size would stretch past the
    # forest's long-edge cutoff and shed its endpoints as singletons.
    vertices, chain_ends = sample_vertices(
        chains, spacing=config.voxel_size / 2.0, return_endpoint_mask=True
    )
    # Chain ends are pinned while smoothing: free ends would otherwise be
    # dragged inward by their one-sided neighborhoods until runs contract
    # into clumps.
    vertices = laplacian_smooth(vertices, config.smoothing, pinned=chain_ends)
    g_init = build_initial_graph(vertices, config.voxel_size)
    n_init = g_init.n_components()

    grid: Optional[LikelihoodGrid] = None
    if method == "likelihood":
        grid = LikelihoodGrid(
            grid_spec_for_chains(chains, config.voxel_size, config.kernel)
        )
        accumulate(grid, chains, config.kernel)
        g_likelihood = build_likelihood_graph(grid, config.path_search)
        skeleton = join_subgraphs(g_init, g_likelihood, config.path_search)
    elif method == "mst":
        skeleton = mst_baseline(vertices)
    else:
        skeleton = ftsem_baseline(g_init, config.ftsem)

    _check_invariants(skeleton, n_init, method)
    return SkeletonizeResult(skeleton, grid, chains, n_init)


def _check_invariants(skeleton: SkeletonGraph, n_init: int, method: str) -> None:
    if not skeleton.is_acyclic():
        raise InvariantViolation(f"{method} produced a cyclic skeleton")
    n_comp = skeleton.n_components()
    if n_comp > n_init:
        raise InvariantViolation(
            f"{method} raised component count {n_init} -> {n_comp}"
        )
    if method == "mst" and n_comp != 1:
        raise InvariantViolation(f"mst output has {n_comp} components")


# ---------------------------------------------------------------------------
# Dataset-level orchestration
# ---------------------------------------------------------------------------


def tree_dir_name(tree_id: int, density: int) -> str:
    return f"tree_{tree_id:02d}_density_{density}"


def find_tree_dirs(dataset_dir) -> List[Path]:
    root = Path(dataset_dir)
    return sorted(p for p in root.glob("tree_*_density_*") if p.is_dir())


def _parse_tree_dir(path: Path) -> Tuple[int, int]:
    parts = path.name.split("_")
    try:
        return int(parts[1]), int(parts[3])
    except (IndexError, ValueError):
        raise ValueError(f"not a tree directory name: {path.name!r}") from None


def _viewpoint_ring(gt: GroundTruthSkeleton, n_viewpoints: int) -> List[np.ndarray]:
    lo, hi = gt.bounding_box()
    center = (lo + hi) / 2.0
    dist = 1.5 * float(np.linalg.norm(hi - lo)) + 1.0
    out = []
    for v in range(n_viewpoints):
        az = 2.0 * np.pi * v / n_viewpoints
        out.append(center + dist * np.array([np.cos(az), np.sin(az), 0.0]))
    return out


def synthesize_tree(
    config: PipelineConfig, tree_id: int, density: int
) -> Tuple[List[BranchCluster], GroundTruthSkeleton, np.ndarray]:
    """Deterministic clusters + ground truth for one (tree, density) cell.

    The tree topology depends only on (master_seed, tree_id), so the same
    tree appears at every density level; occluders are drawn once per cell
    and shared by all viewpoints, and the viewpoints pool their surface
    points per branch before clustering. A ground-truth vertex counts as
    occluded only if every viewpoint lost it.
    """
    tree_params = replace(
        config.tree, rng_seed=derive_seed(config.master_seed, tree_id)
    )
    gt = generate_tree(tree_params)

    occ_rng = np.random.default_rng(
        derive_seed(config.master_seed, tree_id, density, 1)
    )
    base_occ = replace(config.occlusion, foliage_density_level=density)
    occluders = foliage_occluders(gt, base_occ, occ_rng)

    params = replace(
        base_occ, rng_seed=derive_seed(config.master_seed, tree_id, density, 2)
    )
    clusters, occluded = simulate_observations(
        gt,
        params,
        occluders=occluders,
        viewpoints=_viewpoint_ring(gt, config.n_viewpoints),
    )
    return clusters, gt, occluded


def _synth_one(args) -> str:
    config, out_dir, tree_id, density = args
    clusters, gt, mask = synthesize_tree(config, tree_id, density)
    tree_dir = Path(out_dir) / tree_dir_name(tree_id, density)
    tree_dir.mkdir(parents=True, exist_ok=True)
    formats.write_clusters(tree_dir / CLUSTERS_FILE, clusters)
    formats.write_skeleton(tree_dir / GT_FILE, gt.graph)
    formats.write_occlusion_mask(tree_dir / MASK_FILE, mask)
    log.info("wrote %s (%d clusters)", tree_dir.name, len(clusters))
    return str(tree_dir)


def synthesize_dataset(config: PipelineConfig, out_dir, jobs: int = 1) -> List[str]:
    """Write n_trees x density_levels tree directories under out_dir."""
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    work = [
        (config, str(out_dir), t, d)
        for t in range(config.n_trees)
        for d in config.density_levels
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_synth_one, work))
    return [_synth_one(w) for w in work]


def skeleton_file_name(method: str) -> str:
    return f"skeleton_{method}.txt"


def skeletonize_tree_dir(
    tree_dir,
    config: PipelineConfig,
    method: str,
    grid_dump: bool = False,
    volume: bool = False,
) -> SkeletonGraph:
    """Skeletonize one tree directory and write the outputs next to it."""
    tree_dir = Path(tree_dir)
    clusters = formats.read_clusters(tree_dir / CLUSTERS_FILE)
    result = extract_skeleton(clusters, config, method)
    formats.write_skeleton(tree_dir / skeleton_file_name(method), result.skeleton)
    if volume:
        formats.write_volume(tree_dir / f"volume_{method}.txt", result.skeleton)
    if grid_dump:
        if result.grid is None:
            log.warning("method %s builds no grid; skipping grid dump", method)
        else:
            formats.write_grid_dump(tree_dir / f"grid_{method}.txt", result.grid)
    return result.skeleton


def _skeletonize_one(args) -> str:
    tree_dir, config, method, grid_dump, volume = args
    skeletonize_tree_dir(tree_dir, config, method, grid_dump, volume)
    return f"{Path(tree_dir).name}:{method}"


def skeletonize_many(
    tree_dirs: Sequence,
    config: PipelineConfig,
    methods: Sequence[str],
    jobs: int = 1,
    grid_dump: bool = False,
    volume: bool = False,
) -> List[str]:
    work = [
        (str(td), config, m, grid_dump, volume) for td in tree_dirs for m in methods
    ]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_skeletonize_one, work))
    return [_skeletonize_one(w) for w in work]


def evaluate_tree_dir(
    tree_dir, config: PipelineConfig, methods: Sequence[str]
) -> List[Dict]:
    """Score the written skeletons of one tree against its ground truth."""
    tree_dir = Path(tree_dir)
    tree_id, density = _parse_tree_dir(tree_dir)
    gt = formats.read_skeleton(tree_dir / GT_FILE)

    rows: List[Dict] = []
    for method in methods:
        skel_path = tree_dir / skeleton_file_name(method)
        if not skel_path.exists():
            raise FileNotFoundError(str(skel_path))
        skeleton = formats.read_skeleton(skel_path)
        occ_eligible = None
        if method in ("mst", "ftsem"):
            occ_eligible = bridging_vertex_mask(skeleton, config.voxel_size)
        report = label_vertices(skeleton, gt, occ_eligible=occ_eligible)
        rows.append(_report_row(tree_id, method, density, report))
    return rows


def _report_row(tree_id: int, method: str, density: int, report: EvalReport) -> Dict:
    return {
        "tree_id": tree_id,
        "method": method,
        "density": density,
        "precision": report.precision,
        "recall": report.recall,
        "osr": report.osr,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "tp_occ": report.tp_occ,
    }
