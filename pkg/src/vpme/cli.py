"""Command-line entry point: ``vpme run|stability|mollify|moments|w2``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DimMismatch, FormatError, UnknownScenario, VPMEError

log = logging.getLogger("vpme")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpme", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="sampling seed (overrides the config)")

    p = sub.add_parser("run", help="simulate and log diagnostics.csv plus snapshots")
    common(p)
    p = sub.add_parser("stability", help="W2 stability sweep over velocity shifts")
    common(p)
    p.add_argument("--eps", type=_floats, default=[0.1, 0.05, 0.025],
                   help="shift magnitudes, comma separated")
    p.add_argument("--trials", type=int, default=1, help="seeds averaged per shift")
    p = sub.add_parser("mollify", help="mollified versus unmollified runs")
    common(p)
    p.add_argument("--radii", type=_floats, default=[0.2, 0.1, 0.05, 0.025],
                   help="strictly decreasing radii in (0, 1/2]")
    p = sub.add_parser("moments", help="velocity moments over time")
    common(p)
    p.add_argument("--orders", type=_floats, default=[2.0, 4.0, 6.0], help="orders in [0, 8]")
    p = sub.add_parser("w2", help="W2 distance between two snapshot files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--subsample", type=int, default=4000)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        cfg = cfg.replace(out=args.out)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        cfg = cfg.replace(seed=args.seed)
    return cfg


def dispatch(args) -> int:
    if args.command == "w2":
        res = experiments.snapshot_w2(args.file_a, args.file_b, args.subsample)
        print(f"w2 = {res.distance:.17g}  floor = {res.noise_floor:.17g}  "
              f"spread = {res.spread:.17g}")
        return EXIT_OK
    cfg = resolve_config(args)
    if args.command == "run":
        experiments.run(cfg)
    elif args.command == "stability":
        for r in experiments.stability(cfg, args.eps, args.trials):
            log.info("eps = %g: C = %.4g, sup w2 = %.4g", r.eps, r.C, max(r.w2))
    elif args.command == "mollify":
        experiments.mollify(cfg, args.radii)
    elif args.command == "moments":
        experiments.moments(cfg, args.orders)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, FormatError, DimMismatch, UnknownScenario) as exc:
        print(f"vpme: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"vpme: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VPMEError, FloatingPointError) as exc:
        print(f"vpme: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
