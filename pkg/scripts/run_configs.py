"""Run every YAML config in a directory through the experiment runner.

    python3 scripts/run_configs.py [--configs configs] [--out out]
"""
import argparse
import pathlib

from logbsde.config import load_config
from logbsde.runner import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", default=str(pathlib.Path(__file__).resolve().parents[1] / "configs"))
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    for path in sorted(pathlib.Path(args.configs).glob("*.yaml")):
        manifest = run(load_config(path), pathlib.Path(args.out) / path.stem)
        print(f"{path.stem:<16} {manifest.kind:<12} {manifest.verdict:<5} {manifest.wall_clock:8.1f} s")


if __name__ == "__main__":
    main()
