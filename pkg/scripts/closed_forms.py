"""Solve the three closed-form BSDEs and print the errors against their exact answers.

    python3 scripts/closed_forms.py [--paths 100000] [--steps 50] [--seed 7]
"""
import argparse
import math
import time

import numpy as np

from logbsde.forward import CoefficientSet, simulate_uncontrolled
from logbsde.engine import solve_lipschitz
from logbsde.kernel import TimeGrid, sample_bundle
from logbsde.registry import constant_gamma, constant_sigma, generator, single_mark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    grid = TimeGrid.uniform(1.0, args.steps)

    t0 = time.perf_counter()
    b = sample_bundle(grid, 1, args.paths, args.seed)
    s = simulate_uncontrolled(CoefficientSet(1, constant_sigma(1)), [0.0], b)
    sol = solve_lipschitz(generator("zero"), s.terminal[:, 0], s)
    print(f"brownian     Y0 = {sol.y0:+.5f} +/- {sol.y0_se:.5f}   max|Z - 1| = "
          f"{np.max(np.abs(sol.Z[:, :-1, 0] - 1)):.2e}   ({time.perf_counter() - t0:.1f} s)")

    m = single_mark()
    b = sample_bundle(grid, 1, args.paths, args.seed, m)
    co = CoefficientSet(1, lambda t, x: np.zeros((x.shape[0], 1, 1)), constant_gamma(1))
    s = simulate_uncontrolled(co, [0.0], b)
    sol = solve_lipschitz(generator("zero", measure=m), s.terminal[:, 0], s)
    print(f"poisson      Y0 = {sol.y0:+.5f} +/- {sol.y0_se:.5f}   max|V - 1| = "
          f"{np.max(np.abs(sol.V[:, :-1, 0] - 1)):.2e}   max|Z| = {np.max(np.abs(sol.Z)):.2e}")

    b = sample_bundle(grid, 1, 1000, args.seed)
    s = simulate_uncontrolled(CoefficientSet(1, constant_sigma(1)), [0.0], b)
    sol = solve_lipschitz(generator("linear", a_y=0.5, a_z=0.0), np.ones(1000), s)
    discrete = float(np.prod(1 + 0.5 * grid.dt))
    print(f"exponential  Y0 = {sol.y0:.10f}   discrete product {discrete:.10f}   e^0.5 = {math.exp(0.5):.10f}")


if __name__ == "__main__":
    main()
