"""Command line entry point.

Exit status is 0 on success, 2 when any itemized check fails and 1 on hard
errors (bad config, growth violation, solver breakdown, I/O).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..potential import validate_growth
from ..solver import MaxIterExceeded, SingularJacobian
from .config import SCHEMA_VERSION, ConfigError, config_from_dict, load_config
from .experiments import RUNNERS, run_experiment
from .report import FORMATS, emit_report, load_record

log = logging.getLogger("volac")

COMMANDS = {
    "solve": "Newton solve from a configured initial field",
    "sweep": "sweep eps along a branch and locate sigma_min dips",
    "degenerate-eps": "predicted degenerate eps for the constant solution",
    "check-calculus": "finite-difference check of the derivative formulas",
    "probe-generic": "density, openness and symmetry-breaking probes",
    "census": "multistart search for distinct solutions",
    "oracle1d": "1D collocation solution for striped profiles",
    "report": "re-emit a saved result document in other formats",
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--format", action="append", choices=FORMATS, dest="formats",
                        help="output format; repeat for several (default: doc and table)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="volac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=help_text)
        if name == "report":
            sp.add_argument("--input", type=Path, help="result.json or directory (default: --out)")
    return p


def _run(args) -> int:
    formats = tuple(args.formats or ("doc", "table"))
    if args.command == "report":
        src = args.input or args.out
        if src is None:
            raise ConfigError("report needs --input or --out")
        record = load_record(src)
        for p in emit_report(record, args.out or Path(src).parent, formats):
            print(p)
        return 0 if record.passed else 2
    if args.config is not None:
        cfg = load_config(args.config, seed=args.seed, experiment=args.command)
    else:
        cfg = config_from_dict({"schema_version": SCHEMA_VERSION}, seed=args.seed,
                               experiment=args.command)
    pb = cfg.potential
    n = cfg.manifold.d if cfg.manifold.kind == "torus" else 2
    growth = validate_growth(pb.build(), n, tuple(pb.validation_range), pb.validation_samples)
    if not growth.ok:
        print(f"error: potential violates the growth conditions (worst ratio "
              f"{growth.worst_ratio:.4g} at t={growth.offending_t}, p={growth.p}, "
              f"p_n={growth.p_n})", file=sys.stderr)
        return 1
    record = run_experiment(cfg, workers=max(1, args.threads))
    record.results["growth"] = {"ok": growth.ok, "worst_ratio": growth.worst_ratio,
                                "sample_range": list(growth.sample_range),
                                "samples": growth.samples}
    out = args.out or Path(cfg.output or f"volac-out/{args.command}")
    for p in emit_report(record, out, formats):
        print(p)
    for c in record.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    return 0 if record.passed else 2


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, OSError, ValueError, MaxIterExceeded, SingularJacobian) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
