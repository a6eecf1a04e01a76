"""``reliefmap`` command line: simulate, replay, bench, export, segment.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import warnings
from pathlib import Path

import numpy as np

from . import cli_io
from .analysis import compute_normals
from .grid import LAYERS
from .postprocess import regions_to_text, segment_planes, smooth_chain

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> cli_io.RunConfig:
    cfg = cli_io.load_config(args.config) if args.config else cli_io.RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_simulate(args) -> int:
    cfg = _config(args)
    res = cli_io.run_simulate(cfg, args.out, save_scans=args.save_scans)
    print(f"simulated {res.scans_processed} scans, wrote {len(res.snapshots)} snapshots to {args.out}")
    return EXIT_OK


def _cmd_replay(args) -> int:
    cfg = _config(args)
    files = sorted(p for p in Path(args.input).glob("*.csv") if not p.name.endswith(".pose.csv"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = cli_io.run_replay(cfg, files, args.out)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"replayed {res.scans_processed} scans ({res.scans_skipped} skipped), "
          f"wrote {len(res.snapshots)} snapshots to {args.out}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = [int(v) for v in args.points.split(",")] if args.points else None
    rows = cli_io.run_bench(cfg, counts, args.repetitions, out / "bench.csv")
    for row in rows:
        print(f"{row['number of points']:>8d} points: total {1e3 * row['total']:.2f} ms")
    return EXIT_OK


def _cmd_export(args) -> int:
    emap = cli_io.load_snapshot(args.snapshot)
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{Path(args.snapshot).stem}_{args.layer}.{args.format}"
    cli_io.run_export(emap, args.layer, args.format, out)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_segment(args) -> int:
    cfg = _config(args)
    emap = cli_io.load_snapshot(args.snapshot)
    if cfg.segment_filters.steps:
        h, ok = smooth_chain(emap.elevation, emap.valid, cfg.segment_filters)
        emap.layers["valid"][...] = ok
        emap.layers["elevation"][...] = np.where(ok, h, np.nan)
    compute_normals(emap)
    regions = segment_planes(emap, cfg.segment)
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / "regions.txt"
    out.write_text(regions_to_text(regions))
    print(f"{len(regions)} planar regions written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reliefmap", description="Robot-centric elevation mapping tools.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True, mode=True):
        sp.add_argument("--config", help="run configuration file (section.key = value)")
        sp.add_argument("--out", required=True, help="output directory or file")
        if seed:
            sp.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        if mode:
            sp.add_argument("--mode", choices=("det", "par"), help="deterministic or parallel pipeline")

    s = sub.add_parser("simulate", help="simulate a scene and build a map")
    common(s)
    s.add_argument("--save-scans", action="store_true", help="also write clouds and poses for replay")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("replay", help="fuse recorded clouds with pose sidecars")
    common(s)
    s.add_argument("input", help="directory of scan_NNNNNN.csv files with .pose.csv sidecars")
    s.set_defaults(func=_cmd_replay)

    s = sub.add_parser("bench", help="per-phase timing over point counts")
    common(s)
    s.add_argument("--points", help="comma-separated point counts (overrides bench.point_counts)")
    s.add_argument("--repetitions", type=int, help="repetitions per point count")
    s.set_defaults(func=_cmd_bench)

    s = sub.add_parser("export", help="export one snapshot layer as csv or pgm")
    s.add_argument("snapshot")
    s.add_argument("--out", required=True)
    s.add_argument("--layer", default="elevation", help=f"one of: {', '.join(LAYERS)}")
    s.add_argument("--format", choices=("csv", "pgm"), default="csv")
    s.set_defaults(func=_cmd_export)

    s = sub.add_parser("segment", help="extract planar regions from a snapshot")
    s.add_argument("snapshot")
    common(s, seed=False, mode=False)
    s.set_defaults(func=_cmd_segment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (cli_io.DataError, ValueError, OSError) as exc:
        print(f"reliefmap: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
