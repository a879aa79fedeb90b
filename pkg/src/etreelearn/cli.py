"""Command-line driver.

    etree run CONFIG [--jobs N] [--report]
    etree cluster-eval CONFIG [--jobs N] [--report]
    etree replicate-table3 --data-dir DIR [--seeds 1,2,3] [--out DIR]
    etree prepare-har UCI_HAR_DIR OUT_DIR

Exit codes: 0 success, 1 invalid configuration or arguments, 2 failure while running.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import DATA_DIR_ENV, ConfigError, load_config
from .dataset import DatasetError, convert_uci_har

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _print_rows(rows: list[dict]) -> None:
    for r in rows:
        print(f"{r['protocol']:<22}{r['distribution']:<16}acc {r['accuracy_mean']:.4f} ± "
              f"{r['accuracy_std']:.4f}   hops {r['hops_mean']:.0f}")


def _report(out_dir: str) -> None:
    from .report import plot_convergence

    for p in plot_convergence(out_dir):
        print(f"figure: {p}")


def cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg = load_config(args.config)
    _, rows = run_experiment(cfg, jobs=args.jobs)
    _print_rows(rows)
    if args.report:
        _report(cfg.output_dir)
    return EXIT_OK


def cmd_cluster_eval(args) -> int:
    from .experiments import cluster_eval

    cfg = load_config(args.config)
    _, rows = cluster_eval(cfg, jobs=args.jobs)
    _print_rows(rows)
    if args.report:
        _report(cfg.output_dir)
    return EXIT_OK


def cmd_table3(args) -> int:
    from .experiments import format_table3, replicate_table3

    data_dir = Path(args.data_dir or os.environ.get(DATA_DIR_ENV, ""))
    if not args.data_dir and not os.environ.get(DATA_DIR_ENV):
        raise ConfigError("--data-dir", f"required (or set {DATA_DIR_ENV})")
    missing = [f for f in ("har_train.csv", "har_test.csv") if not (data_dir / f).is_file()]
    if missing:
        raise ConfigError("--data-dir", f"{data_dir} lacks {', '.join(missing)}; see 'etree prepare-har'")
    summary = replicate_table3(data_dir, args.seeds, args.out, jobs=args.jobs)
    print(format_table3(summary))
    if args.report:
        for dist in summary:
            _report(str(Path(args.out) / dist))
    return EXIT_OK


def cmd_prepare_har(args) -> int:
    src = Path(args.src)
    if not (src / "train" / "X_train.txt").is_file():
        raise ConfigError("src", f"{src} does not look like the UCI HAR folder (train/X_train.txt missing)")
    train, test = convert_uci_har(src, args.out)
    print(f"wrote {train} and {test}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etree", description="E-Tree learning simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every protocol x seed of a config")
    r.add_argument("config")
    c = sub.add_parser("cluster-eval", help="compare K-Means, Ununiform-KMA and KMA over a delta sweep")
    c.add_argument("config")
    t = sub.add_parser("replicate-table3", help="five protocols under IID and NonIID(4 classes)")
    t.add_argument("--data-dir", default=None, help=f"folder with har_train.csv/har_test.csv (or ${DATA_DIR_ENV})")
    t.add_argument("--seeds", type=_seeds, default=[1, 2, 3])
    t.add_argument("--out", default="out/table3")
    for sp in (r, c, t):
        sp.add_argument("--jobs", type=int, default=1, help="parallel seeds")
        sp.add_argument("--report", action="store_true", help="also render PNG figures next to the CSVs")
    h = sub.add_parser("prepare-har", help="convert the raw UCI HAR folder to CSV")
    h.add_argument("src")
    h.add_argument("out")

    r.set_defaults(fn=cmd_run)
    c.set_defaults(fn=cmd_cluster_eval)
    t.set_defaults(fn=cmd_table3)
    h.set_defaults(fn=cmd_prepare_har)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DatasetError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
