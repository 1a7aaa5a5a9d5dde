"""``gradlab`` command line.

Exit codes: 0 all checks passed, 1 a check failed or the run raised,
2 the config was invalid.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .. import __version__
from ..exceptions import ConfigError, GradlabError
from .config import REQUIRED, load_config
from .experiments import run_experiment


def _parser():
    p = argparse.ArgumentParser(prog="gradlab", description="Run gradient experiments from JSON configs.")
    p.add_argument("--version", action="version", version=f"gradlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment named by the config's kind")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="CSV path (overrides the config)")
    gc = sub.add_parser("gradcheck", help="finite-difference gradient check of the config's model")
    gc.add_argument("config")
    gc.add_argument("-o", "--output", help="CSV path (overrides the config)")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "gradcheck":
            for key in REQUIRED["gradcheck"]:
                if getattr(cfg, key) is None:
                    raise ConfigError(key, "required for gradcheck")
            cfg = replace(cfg, kind="gradcheck")
        if args.output:
            cfg = replace(cfg, output=args.output)
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GradlabError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if getattr(exc, "filename", None) == args.config else 1
    if not cfg.output:
        sys.stdout.write(report.to_csv())
    for c in report.checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name} {c.detail}".rstrip())
    for k, v in report.metrics.items():
        print(f"{k} = {v}")
    print(report.summary)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
