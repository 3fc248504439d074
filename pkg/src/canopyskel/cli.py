"""Command-line interface.

Three commands cover the experiment loop:

  canopyskel synth OUT_DIR          generate the synthetic dataset
  canopyskel skeletonize PATH       skeletonize one tree dir (or all under a root)
  canopyskel evaluate DATASET_DIR   score written skeletons, emit CSV + table

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed files), 3 internal invariant violation. The
CANOPYSKEL_LOG environment variable (debug/info/warning/error) controls
log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import pipeline
from .config import METHODS, ConfigError, PipelineConfig, load_config
from .evaluation import aggregate, render_summary_table
from .formats import ParseError, write_report_csv

__all__ = ["main"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


def _make_parser() -> argparse.ArgumentParser:
    class Parser(argparse.ArgumentParser):
        def error(self, message):
            self.print_usage(sys.stderr)
            print(f"{self.prog}: error: {message}", file=sys.stderr)
            raise SystemExit(EXIT_USAGE)

    parser = Parser(
        prog="canopyskel",
        description="Skeleton extraction for occluded branching structures.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    def add_common(p):
        p.add_argument("--config", type=str, default=None,
                       help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--voxel-size", type=float, default=None,
                       help="override the grid voxel size in meters")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("out_dir", type=str)
    add_common(p_synth)

    p_skel = sub.add_parser("skeletonize",
                            help="skeletonize a tree directory (or every tree under a dataset root)")
    p_skel.add_argument("tree_dir", type=str)
    p_skel.add_argument("--method", choices=METHODS, default="likelihood")
    p_skel.add_argument("--grid-dump", action="store_true",
                        help="also write the likelihood grid")
    p_skel.add_argument("--volume", action="store_true",
                        help="also write the sphere-per-vertex volume")
    add_common(p_skel)

    p_eval = sub.add_parser("evaluate", help="score written skeletons")
    p_eval.add_argument("dataset_dir", type=str)
    p_eval.add_argument("--method", action="append", choices=METHODS, default=None,
                        help="method to score (repeatable; default: all)")
    p_eval.add_argument("--plot", action="store_true",
                        help="write precision/recall/osr vs density plot (svg)")
    add_common(p_eval)
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("CANOPYSKEL_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def _load_effective_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.master_seed = int(args.seed)
    if args.voxel_size is not None:
        if args.voxel_size <= 0:
            raise ConfigError(f"--voxel-size must be positive, got {args.voxel_size}")
        config.voxel_size = float(args.voxel_size)
    return config


def _cmd_synth(args) -> int:
    config = _load_effective_config(args)
    if config.n_trees == 0:
        print("warning: n_trees is 0, writing an empty dataset", file=sys.stderr)
    written = pipeline.synthesize_dataset(config, args.out_dir, jobs=args.jobs)
    print(f"wrote {len(written)} tree directories under {args.out_dir}")
    return EXIT_OK


def _cmd_skeletonize(args) -> int:
    config = _load_effective_config(args)
    root = Path(args.tree_dir)
    if not root.exists():
        print(f"error: {root} does not exist", file=sys.stderr)
        return EXIT_DATA
    if (root / pipeline.CLUSTERS_FILE).exists():
        tree_dirs = [root]
    else:
        tree_dirs = pipeline.find_tree_dirs(root)
        if not tree_dirs:
            print(f"error: no clusters file or tree directories in {root}",
                  file=sys.stderr)
            return EXIT_DATA
    done = pipeline.skeletonize_many(
        tree_dirs, config, [args.method], jobs=args.jobs,
        grid_dump=args.grid_dump, volume=args.volume,
    )
    print(f"skeletonized {len(done)} tree(s) with method {args.method}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    config = _load_effective_config(args)
    methods = args.method or list(METHODS)
    root = Path(args.dataset_dir)
    tree_dirs = pipeline.find_tree_dirs(root)
    if not tree_dirs:
        print(f"error: no tree directories under {root}", file=sys.stderr)
        return EXIT_DATA

    missing: List[str] = []
    for td in tree_dirs:
        for m in methods:
            path = td / pipeline.skeleton_file_name(m)
            if not path.exists():
                missing.append(str(path))
    if missing:
        print("error: missing skeleton files:", file=sys.stderr)
        for m in missing:
            print(f"  {m}", file=sys.stderr)
        return EXIT_DATA

    rows: List[dict] = []
    for td in tree_dirs:
        rows.extend(pipeline.evaluate_tree_dir(td, config, methods))
    rows.sort(key=lambda r: (r["tree_id"], r["density"], METHODS.index(r["method"])))

    csv_path = root / "report.csv"
    write_report_csv(csv_path, rows)
    summaries = aggregate(rows)
    print(render_summary_table(summaries))
    print(f"report written to {csv_path}")

    if args.plot:
        plot_path = root / "summary_plot.svg"
        _write_plot(summaries, plot_path)
        print(f"plot written to {plot_path}")
    return EXIT_OK


def _write_plot(summaries: Sequence[dict], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = ("precision", "recall", "osr")
    methods = sorted({s["method"] for s in summaries})
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5), sharex=True)
    for ax, metric in zip(axes, metrics):
        for m in methods:
            pts = sorted(
                (s["density"], s[metric]) for s in summaries if s["method"] == m
            )
            if pts:
                ax.plot([p[0] for p in pts], [p[1] for p in pts],
                        marker="o", label=m)
        ax.set_xlabel("foliage density level")
        ax.set_ylabel(metric)
        ax.set_ylim(-0.02, 1.02)
        ax.grid(True, alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    handlers = {
        "synth": _cmd_synth,
        "skeletonize": _cmd_skeletonize,
        "evaluate": _cmd_evaluate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: missing file {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except pipeline.InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - last-resort guard
        log.exception("unhandled failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
