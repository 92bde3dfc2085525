"""Command line entry point.

    logbsde run --config FILE [--seed N] [--out-dir DIR] [--validate-only]
    logbsde validate --config FILE

Exit codes: 0 every verdict passed, 1 configuration error, 2 numerical
failure, 3 a verdict failed.
"""
from __future__ import annotations

import argparse
import sys

from .config import load_config, validate
from .errors import ConfigError, LogBsdeError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERDICT = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="logbsde", description="Log-growth BSDE experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out-dir", default="out")
    r.add_argument("--validate-only", action="store_true")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    return p


def _error(kind: str, exc: Exception) -> None:
    print(f"error[{kind}]: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            if args.seed < 0:
                raise ConfigError("must be nonnegative", field="--seed")
            cfg = cfg.with_seed(args.seed)
        if args.command == "validate" or args.validate_only:
            diags = validate(cfg)
            for line in diags:
                print(line)
            if not diags:
                print("ok")
            return EXIT_CONFIG if diags else EXIT_OK
        from .runner import run

        manifest = run(cfg, args.out_dir)
    except ConfigError as exc:
        _error(getattr(exc, "code", "config"), exc)
        return EXIT_CONFIG
    except LogBsdeError as exc:
        _error("numerical", exc)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        _error("numerical", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        _error("io", exc)
        return EXIT_CONFIG
    print(f"{manifest.kind}: {manifest.verdict} ({', '.join(manifest.outputs)})")
    return EXIT_OK if manifest.verdict == "pass" else EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
