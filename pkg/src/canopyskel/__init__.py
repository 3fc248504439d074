"""Skeleton extraction for partially occluded branching structures.

The package turns semantically clustered surface points of a branching
object (for example a tree canopy scanned from the outside) into a sparse
skeleton graph. Occlusion gaps are bridged by accumulating per-cluster
segment evidence into a voxel likelihood field and routing minimum-cost
paths through it.
"""

from .baselines import FtsemConfig, bridging_vertex_mask, ftsem_baseline, mst_baseline
from .config import METHODS, ConfigError, PipelineConfig, load_config, save_config
from .evaluation import (
    EvalReport,
    VertexLabel,
    aggregate,
    label_vertices,
    render_summary_table,
)
from .geometry import (
    BranchCluster,
    DegenerateSegmentError,
    LineSegment,
    Provenance,
    SegmentChain,
    SkeletonGraph,
    SkeletonVertex,
    euclidean_mst,
    point_segment_distances,
)
from .likelihood import (
    EllipsoidKernelConfig,
    GridSpec,
    LikelihoodGrid,
    accumulate,
    apply_observation,
    fuse,
    grid_spec_for_chains,
    observed_prob,
    traverse_voxels,
)
from .pipeline import (
    InvariantViolation,
    SkeletonizeResult,
    derive_seed,
    extract_skeleton,
    synthesize_dataset,
    synthesize_tree,
)
from .segment_fit import DegenerateClusterError, FitConfig, estimate_radius, fit_chain
from .skeleton import (
    LikelihoodGraph,
    PathResult,
    PathSearchConfig,
    SmoothingConfig,
    build_initial_graph,
    build_likelihood_graph,
    join_subgraphs,
    laplacian_smooth,
    min_cost_path,
    sample_vertices,
)
from .synthgen import (
    GroundTruthSkeleton,
    OcclusionParams,
    TreeGenParams,
    generate_tree,
    simulate_observations,
)

__version__ = "0.1.0"

__all__ = [
    "BranchCluster",
    "ConfigError",
    "DegenerateClusterError",
    "DegenerateSegmentError",
    "EllipsoidKernelConfig",
    "EvalReport",
    "FitConfig",
    "FtsemConfig",
    "GridSpec",
    "GroundTruthSkeleton",
    "InvariantViolation",
    "LikelihoodGraph",
    "LikelihoodGrid",
    "LineSegment",
    "METHODS",
    "OcclusionParams",
    "PathResult",
    "PathSearchConfig",
    "PipelineConfig",
    "Provenance",
    "SegmentChain",
    "SkeletonGraph",
    "SkeletonVertex",
    "SkeletonizeResult",
    "SmoothingConfig",
    "TreeGenParams",
    "VertexLabel",
    "accumulate",
    "aggregate",
    "apply_observation",
    "bridging_vertex_mask",
    "build_initial_graph",
    "build_likelihood_graph",
    "derive_seed",
    "estimate_radius",
    "euclidean_mst",
    "extract_skeleton",
    "fit_chain",
    "ftsem_baseline",
    "fuse",
    "generate_tree",
    "grid_spec_for_chains",
    "join_subgraphs",
    "label_vertices",
    "laplacian_smooth",
    "load_config",
    "min_cost_path",
    "mst_baseline",
    "observed_prob",
    "point_segment_distances",
    "render_summary_table",
    "sample_vertices",
    "save_config",
    "simulate_observations",
    "synthesize_dataset",
    "synthesize_tree",
    "traverse_voxels",
]
