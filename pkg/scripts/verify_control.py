"""Verify the optimal policy of the toy control problems against constant challengers.

    python3 scripts/verify_control.py [--problem bang_bang|jump_control|degenerate] [--paths 100000] [--seed 11]
"""
import argparse

from logbsde.control import constant_scan, verify_optimality
from logbsde.kernel import TimeGrid, sample_bundle
from logbsde.registry import PROBLEMS, problem


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", choices=sorted(PROBLEMS), default="bang_bang")
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--scan", action="store_true", help="also evaluate every constant policy on the grid")
    args = ap.parse_args()

    pb = problem(args.problem)
    grid = TimeGrid.uniform(1.0, args.steps)
    rep = verify_optimality(pb, grid, args.paths, args.seed, reweight=True)
    print(rep.table())
    if args.scan:
        vals = constant_scan(pb, sample_bundle(grid, pb.d, args.paths, args.seed + 1, pb.measure))
        for v in sorted(vals, key=lambda v: -v.direct):
            print(f"{v.policy:<40} {v.direct:>10.5f} +/- {v.direct_se:.5f}")


if __name__ == "__main__":
    main()
