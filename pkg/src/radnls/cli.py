"""Command-line entry point: ``radnls <kind> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import KINDS, ConfigError, load_config, schema_table
from .errors import RadNLSError
from .runner import emit_plots, run_experiment
from .scattering import WORKERS_ENV

log = logging.getLogger("radnls")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radnls",
        description="Radial defocusing NLS experiments with reproducible manifests.",
        epilog=f"Worker processes for sweeps: set {WORKERS_ENV} (default 1).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="flat 'section.key = value' file")
        p.add_argument("--out", help="output directory (overrides experiment.out)")
        p.add_argument("--plots", action="store_true", help="also emit gnuplot scripts")
        if kind == "verify":
            p.add_argument("--quick", action="store_true", help="reduced resolutions")
    sub.add_parser("keys", help="print the configuration key table")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "keys":
        print(schema_table())
        return 0
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    if cfg.kind != args.command:
        print(f"config says experiment.kind = {cfg.kind!r} but the subcommand is {args.command!r}", file=sys.stderr)
        return 2
    quick = True if getattr(args, "quick", False) else None
    try:
        man = run_experiment(cfg, args.out, quick=quick)
    except RadNLSError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.plots:
        emit_plots(man)
    for name, c in man.checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']:.6g} (threshold {c['threshold']:.6g}) {c['note']}")
    print(f"manifest: {man.out_dir}/manifest.json")
    return 0 if man.ok else 1


if __name__ == "__main__":
    sys.exit(main())
