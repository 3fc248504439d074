"""Plain-text file formats for clusters, skeletons, grids, and reports.

All formats are line-delimited text chosen for diff-ability. Floats are
written with shortest round-trip formatting, so write→read reproduces the
exact same values and identical data always produces identical bytes.
Parse failures report the offending file and line number.
"""

from __future__ import annotations

import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import BranchCluster, Provenance, SkeletonGraph, SkeletonVertex
from .likelihood import GridSpec, LikelihoodGrid

__all__ = [
    "ParseError",
    "REPORT_CSV_HEADER",
    "write_clusters",
    "read_clusters",
    "write_skeleton",
    "read_skeleton",
    "write_occlusion_mask",
    "read_occlusion_mask",
    "write_grid_dump",
    "read_grid_dump",
    "write_volume",
    "write_report_csv",
    "clusters_to_ply",
    "clusters_from_ply",
]

REPORT_CSV_HEADER = "tree_id,method,density,precision,recall,osr,tp,fp,fn,tp_occ"


class ParseError(ValueError):
    """Malformed input file; message carries file name and line number."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def _fmt(x: float) -> str:
    return repr(float(x))


class _LineReader:
    """Sequential token-line reader that tracks line numbers for errors."""

    def __init__(self, path):
        self.path = path
        with open(path, "r", encoding="utf-8") as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    def next_tokens(self, expect_min: int, what: str) -> List[str]:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line and not line.startswith("#"):
                tokens = line.split()
                if len(tokens) < expect_min:
                    raise ParseError(
                        self.path, self.pos,
                        f"expected {what} ({expect_min} fields), got {line!r}",
                    )
                return tokens
        raise ParseError(self.path, self.pos + 1, f"unexpected end of file, wanted {what}")

    def parse_float(self, token: str, what: str) -> float:
        try:
            return float(token)
        except ValueError:
            raise ParseError(self.path, self.pos, f"bad {what}: {token!r}") from None

    def parse_int(self, token: str, what: str) -> int:
        try:
            return int(token)
        except ValueError:
            raise ParseError(self.path, self.pos, f"bad {what}: {token!r}") from None


# ---------------------------------------------------------------------------
# Branch clusters
# ---------------------------------------------------------------------------


def write_clusters(path, clusters: Sequence[BranchCluster]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in clusters:
            fh.write(f"cluster {c.cluster_id} {_fmt(c.confidence)} {len(c)}\n")
            for x, y, z in c.points:
                fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def read_clusters(path) -> List[BranchCluster]:
    reader = _LineReader(path)
    clusters: List[BranchCluster] = []
    while reader.pos < len(reader.lines):
        # peek for EOF: skip trailing blank lines
        rest = [ln for ln in reader.lines[reader.pos:] if ln.strip()]
        if not rest:
            break
        tokens = reader.next_tokens(4, "cluster header")
        if tokens[0] != "cluster":
            raise ParseError(reader.path, reader.pos,
                             f"expected 'cluster' header, got {tokens[0]!r}")
        cid = reader.parse_int(tokens[1], "cluster id")
        confidence = reader.parse_float(tokens[2], "confidence")
        n = reader.parse_int(tokens[3], "point count")
        pts = np.empty((n, 3), dtype=np.float64)
        for i in range(n):
            row = reader.next_tokens(3, "point coordinates")
            pts[i] = [reader.parse_float(t, "coordinate") for t in row[:3]]
        try:
            clusters.append(BranchCluster(pts, confidence, cluster_id=cid))
        except ValueError as exc:
            raise ParseError(reader.path, reader.pos, str(exc)) from None
    return clusters


# ---------------------------------------------------------------------------
# Skeleton graphs
# ---------------------------------------------------------------------------


def write_skeleton(path, graph: SkeletonGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"skeleton {len(graph.vertices)} {len(graph.edges)}\n")
        for i, v in enumerate(graph.vertices):
            x, y, z = v.position
            fh.write(
                f"{i} {_fmt(x)} {_fmt(y)} {_fmt(z)} "
                f"{_fmt(v.radius)} {v.provenance.value}\n"
            )
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")


def read_skeleton(path) -> SkeletonGraph:
    reader = _LineReader(path)
    tokens = reader.next_tokens(3, "skeleton header")
    if tokens[0] != "skeleton":
        raise ParseError(reader.path, reader.pos,
                         f"expected 'skeleton' header, got {tokens[0]!r}")
    nv = reader.parse_int(tokens[1], "vertex count")
    ne = reader.parse_int(tokens[2], "edge count")

    vertices: List[SkeletonVertex] = []
    for i in range(nv):
        row = reader.next_tokens(6, "vertex record")
        vid = reader.parse_int(row[0], "vertex id")
        if vid != i:
            raise ParseError(reader.path, reader.pos,
                             f"vertex ids must be sequential, got {vid} wanted {i}")
        x, y, z = (reader.parse_float(t, "coordinate") for t in row[1:4])
        radius = reader.parse_float(row[4], "radius")
        try:
            provenance = Provenance(row[5])
        except ValueError:
            raise ParseError(reader.path, reader.pos,
                             f"unknown provenance {row[5]!r}") from None
        try:
            vertices.append(SkeletonVertex(np.array([x, y, z]), radius, provenance))
        except ValueError as exc:
            raise ParseError(reader.path, reader.pos, str(exc)) from None

    edges: List[Tuple[int, int]] = []
    for _ in range(ne):
        row = reader.next_tokens(2, "edge record")
        edges.append((reader.parse_int(row[0], "edge endpoint"),
                      reader.parse_int(row[1], "edge endpoint")))
    try:
        return SkeletonGraph(vertices, edges)
    except ValueError as exc:
        raise ParseError(reader.path, reader.pos, str(exc)) from None


# ---------------------------------------------------------------------------
# Occlusion masks
# ---------------------------------------------------------------------------


def write_occlusion_mask(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"mask {len(mask)}\n")
        for bit in mask:
            fh.write("1\n" if bit else "0\n")


def read_occlusion_mask(path) -> np.ndarray:
    reader = _LineReader(path)
    tokens = reader.next_tokens(2, "mask header")
    if tokens[0] != "mask":
        raise ParseError(reader.path, reader.pos,
                         f"expected 'mask' header, got {tokens[0]!r}")
    n = reader.parse_int(tokens[1], "mask length")
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        row = reader.next_tokens(1, "mask bit")
        if row[0] not in ("0", "1"):
            raise ParseError(reader.path, reader.pos, f"bad mask bit {row[0]!r}")
        out[i] = row[0] == "1"
    return out


# ---------------------------------------------------------------------------
# Likelihood grid dump (debugging)
# ---------------------------------------------------------------------------


def write_grid_dump(path, grid: LikelihoodGrid) -> None:
    """Header: origin, voxel size, dims; then one 'ix iy iz p' per voxel."""
    spec = grid.spec
    ox, oy, oz = spec.origin
    nx, ny, nz = spec.dims
    idx, vals = grid.stored()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"grid {_fmt(ox)} {_fmt(oy)} {_fmt(oz)} "
            f"{_fmt(spec.voxel_size)} {nx} {ny} {nz}\n"
        )
        for (ix, iy, iz), p in zip(idx, vals):
            fh.write(f"{ix} {iy} {iz} {_fmt(p)}\n")


def read_grid_dump(path) -> LikelihoodGrid:
    reader = _LineReader(path)
    tokens = reader.next_tokens(8, "grid header")
    if tokens[0] != "grid":
        raise ParseError(reader.path, reader.pos,
                         f"expected 'grid' header, got {tokens[0]!r}")
    origin = np.array([reader.parse_float(t, "origin") for t in tokens[1:4]])
    voxel_size = reader.parse_float(tokens[4], "voxel size")
    dims = tuple(reader.parse_int(t, "grid dims") for t in tokens[5:8])
    spec = GridSpec(origin, voxel_size, dims)
    values = np.zeros(dims, dtype=np.float64)
    while reader.pos < len(reader.lines):
        if not any(ln.strip() for ln in reader.lines[reader.pos:]):
            break
        row = reader.next_tokens(4, "voxel record")
        ix, iy, iz = (reader.parse_int(t, "voxel index") for t in row[:3])
        p = reader.parse_float(row[3], "probability")
        if not (0 <= ix < dims[0] and 0 <= iy < dims[1] and 0 <= iz < dims[2]):
            raise ParseError(reader.path, reader.pos,
                             f"voxel index ({ix}, {iy}, {iz}) out of bounds")
        if not (0.0 <= p <= 1.0):
            raise ParseError(reader.path, reader.pos, f"probability {p} out of range")
        values[ix, iy, iz] = p
    return LikelihoodGrid(spec, values)


# ---------------------------------------------------------------------------
# Volume export and evaluation reports
# ---------------------------------------------------------------------------


def write_volume(path, graph: SkeletonGraph) -> None:
    """Sphere-per-vertex shape record: 'x y z radius' lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"volume {len(graph.vertices)}\n")
        for v in graph.vertices:
            x, y, z = v.position
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {_fmt(v.radius)}\n")


def write_report_csv(path, rows: Sequence[Dict]) -> None:
    """Fixed-header CSV with fixed float formatting (byte-stable output)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_CSV_HEADER + "\n")
        for r in rows:
            fh.write(
                f'{r["tree_id"]},{r["method"]},{r["density"]},'
                f'{r["precision"]:.6f},{r["recall"]:.6f},{r["osr"]:.6f},'
                f'{r["tp"]},{r["fp"]},{r["fn"]},{r["tp_occ"]}\n'
            )


# ---------------------------------------------------------------------------
# Polygon-format interchange for cluster point clouds
# ---------------------------------------------------------------------------


def clusters_to_ply(path, clusters: Sequence[BranchCluster]) -> None:
    """ASCII polygon file with per-point cluster id and confidence."""
    total = sum(len(c) for c in clusters)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {total}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property int cluster_id\nproperty float confidence\n")
        fh.write("end_header\n")
        for c in clusters:
            for x, y, z in c.points:
                fh.write(
                    f"{_fmt(x)} {_fmt(y)} {_fmt(z)} {c.cluster_id} {_fmt(c.confidence)}\n"
                )


def clusters_from_ply(path) -> List[BranchCluster]:
    reader = _LineReader(path)
    tokens = reader.next_tokens(1, "ply magic")
    if tokens[0] != "ply":
        raise ParseError(reader.path, reader.pos, "not a ply file")
    n_vertices = None
    properties: List[str] = []
    while True:
        tokens = reader.next_tokens(1, "ply header line")
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format" and tokens[1] != "ascii":
            raise ParseError(reader.path, reader.pos, "only ascii ply is supported")
        if tokens[0] == "element" and tokens[1] == "vertex":
            n_vertices = reader.parse_int(tokens[2], "vertex count")
        if tokens[0] == "property":
            properties.append(tokens[-1])
    if n_vertices is None:
        raise ParseError(reader.path, reader.pos, "missing vertex element")
    for needed in ("x", "y", "z", "cluster_id", "confidence"):
        if needed not in properties:
            raise ParseError(reader.path, reader.pos,
                             f"missing vertex property {needed!r}")
    col = {name: i for i, name in enumerate(properties)}

    by_cluster: Dict[int, List[List[float]]] = {}
    conf: Dict[int, float] = {}
    for _ in range(n_vertices):
        row = reader.next_tokens(len(properties), "vertex row")
        cid = reader.parse_int(row[col["cluster_id"]], "cluster id")
        xyz = [reader.parse_float(row[col[a]], a) for a in ("x", "y", "z")]
        by_cluster.setdefault(cid, []).append(xyz)
        conf[cid] = reader.parse_float(row[col["confidence"]], "confidence")
    out = []
    for cid in sorted(by_cluster):
        try:
            out.append(BranchCluster(np.array(by_cluster[cid]), conf[cid], cluster_id=cid))
        except ValueError as exc:
            raise ParseError(reader.path, reader.pos, str(exc)) from None
    return out
