"""Backward least-squares Monte Carlo solver and the diagnostics built on it.

At each step i (backward from the terminal index) with state x_i:

    cont_i = E[Y_{i+1} | x_i]                       plain regression
    Z_i, V_i                                        increment regression (see below)
    Y_i    = cont_i + f(t_i, cont_i, Z_i, V_i) dt_i

Two increment estimators are available. ``"joint"`` (default) fits Y_{i+1} on
the products [phi(x_i), phi(x_i) dW_i, phi(x_i) Ntilde_i] in one least-squares
problem and reads Z and V off the increment blocks; it is exact whenever
Y_{i+1} is linear in the increments with basis-spanned coefficients.
``"product"`` regresses Y_{i+1} dW_i / dt_i and Y_{i+1} Ntilde_ik / (lambda_k dt_i)
on phi(x_i) separately. Both have the same population limit.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, RegressionError
from .forward import StatePaths
from .generators import GeneratorSpec, ThetaWeight, mollify, rho_N, theta
from .kernel import PathBundle

log = logging.getLogger(__name__)

RIDGE = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class RegressionBasis:
    kind: str = "polynomial"
    degree: int = 1
    n_bins: int = 20

    def __post_init__(self):
        if self.kind not in ("polynomial", "bins"):
            raise ConfigError(f"unknown basis kind {self.kind!r}", field="solver.basis")
        if self.degree < 0 or self.n_bins < 1:
            raise ConfigError("degree must be >= 0 and n_bins >= 1", field="solver.basis")

    def design(self, x: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
        """Design matrix on the sampled states x: (P, d) -> (P, n_cols)."""
        P = x.shape[0]
        if self.kind == "bins":
            return self._bins(x)
        degree = self.degree if degree is None else degree
        sd = x.std(axis=0)
        live = sd > 1e-12 * (1.0 + np.abs(x.mean(axis=0)))
        u = (x[:, live] - x[:, live].mean(axis=0)) / sd[live]
        cols = [np.ones(P)]
        for k in range(1, degree + 1):
            for combo in itertools.combinations_with_replacement(range(u.shape[1]), k):
                cols.append(np.prod(u[:, list(combo)], axis=1))
        return np.stack(cols, axis=1)

    def _bins(self, x):
        P, d = x.shape
        cell = np.zeros(P, dtype=np.int64)
        for j in range(d):
            qs = np.quantile(x[:, j], np.linspace(0, 1, self.n_bins + 1)[1:-1])
            edges = np.unique(qs)
            cell = cell * (edges.size + 1) + np.searchsorted(edges, x[:, j], side="right")
        _, idx = np.unique(cell, return_inverse=True)
        A = np.zeros((P, idx.max() + 1))
        A[np.arange(P), idx] = 1.0
        return A


@dataclass
class _Projector:
    """Least-squares projector onto the columns of A (ridge-regularized when near-singular)."""

    A: np.ndarray
    cond: float
    ridge: bool

    @classmethod
    def build(cls, A):
        G = A.T @ A
        cond = float(np.linalg.cond(G))
        ridge = not np.isfinite(cond) or cond > COND_LIMIT
        return cls(A, cond, ridge)

    def coefficients(self, targets):
        G = self.A.T @ self.A
        if self.ridge:
            G = G + RIDGE * np.trace(G) * np.eye(G.shape[0])
        return np.linalg.solve(G, self.A.T @ targets)

    def fit(self, targets):
        return self.A @ self.coefficients(targets)


def _projector(basis: RegressionBasis, x: np.ndarray):
    """Projector for the states x, falling back to lower degree on rank deficiency."""
    P = x.shape[0]
    degree = basis.degree
    while True:
        A = basis.design(x, degree)
        if A.shape[1] > max(1, P // 10) and basis.kind == "polynomial" and degree > 0:
            degree -= 1
            continue
        G = A.T @ A
        if np.linalg.matrix_rank(G, hermitian=True) < A.shape[1]:
            if basis.kind == "polynomial" and degree > 0:
                degree -= 1
                continue
            raise RegressionError("rank-deficient design with no lower-degree fallback")
        return _Projector.build(A), degree


@dataclass(eq=False)
class BsdeSolution:
    """Y: (P, n+1), Z: (P, n+1, d), V: (P, n+1, K); index n is terminal."""

    Y: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    F: np.ndarray
    xi: np.ndarray
    states: StatePaths
    bundle: PathBundle
    basis: RegressionBasis
    diagnostics: list = field(default_factory=list)

    @property
    def grid(self):
        return self.bundle.grid

    @property
    def y0(self) -> float:
        return float(np.mean(self.Y[:, 0]))

    @property
    def y0_se(self) -> float:
        """Standard error of the plain Monte Carlo estimate of E[xi + sum_i f_i dt_i]."""
        realized = self.xi + self.F @ self.grid.dt
        return float(np.std(realized, ddof=1) / math.sqrt(realized.shape[0]))

    def summary(self) -> dict:
        return {
            "y0": self.y0,
            "y0_se": self.y0_se,
            "n_paths": int(self.Y.shape[0]),
            "n_steps": int(self.Y.shape[1] - 1),
            "basis": {"kind": self.basis.kind, "degree": self.basis.degree, "n_bins": self.basis.n_bins},
            "diagnostics": self.diagnostics,
        }


def solve_lipschitz(f: GeneratorSpec, xi, states: StatePaths, bundle: Optional[PathBundle] = None,
                    basis: RegressionBasis = RegressionBasis(), scheme: str = "joint") -> BsdeSolution:
    """Explicit backward regression scheme for a driver with a Lipschitz certificate."""
    if f.lipschitz_certificate is None:
        raise ConfigError(f"driver {f.name!r} carries no Lipschitz certificate", field="generator")
    if scheme not in ("joint", "product"):
        raise ConfigError(f"unknown scheme {scheme!r}", field="solver.scheme")
    bundle = states.bundle if bundle is None else bundle
    xi = np.asarray(xi, dtype=float).reshape(-1)
    P, n = bundle.n_paths, bundle.n_steps
    d, K = bundle.d, bundle.n_marks
    if xi.shape[0] != P or states.x.shape[0] != P or states.x.shape[1] != n + 1:
        raise ConfigError("terminal values, states and bundle disagree on paths/steps", field="xi")
    if f.d != d or f.K != K:
        raise ConfigError(f"driver expects (d={f.d}, K={f.K}), bundle has (d={d}, K={K})", field="generator")
    times, dt = bundle.grid.times, bundle.grid.dt
    ntil = bundle.compensated_counts()
    lam = bundle.measure.weights if K else np.zeros(0)

    Y = np.empty((P, n + 1))
    Z = np.zeros((P, n + 1, d))
    V = np.zeros((P, n + 1, K))
    F = np.zeros((P, n))
    Y[:, n] = xi
    diags = []
    for i in range(n - 1, -1, -1):
        x = states.x[:, i, :]
        target = Y[:, i + 1]
        proj, deg = _projector(basis, x)
        A = proj.A
        cont = proj.fit(target)
        dW = bundle.dW[:, i, :]
        dN = ntil[:, i, :]
        if scheme == "joint":
            blocks = [A] + [A * dW[:, [j]] for j in range(d)] + [A * dN[:, [k]] for k in range(K)]
            J = _Projector.build(np.concatenate(blocks, axis=1))
            coef = J.coefficients(target)
            nb = A.shape[1]
            for j in range(d):
                Z[:, i, j] = A @ coef[(1 + j) * nb:(2 + j) * nb]
            for k in range(K):
                V[:, i, k] = A @ coef[(1 + d + k) * nb:(2 + d + k) * nb]
            joint_cond = J.cond
        else:
            rhs = [target * dW[:, j] / dt[i] for j in range(d)]
            rhs += [target * dN[:, k] / (lam[k] * dt[i]) for k in range(K)]
            if rhs:
                fitted = proj.fit(np.stack(rhs, axis=1))
                Z[:, i, :] = fitted[:, :d]
                V[:, i, :] = fitted[:, d:]
            joint_cond = None
        F[:, i] = f.eval(times[i], cont, Z[:, i, :], V[:, i, :], x)
        Y[:, i] = cont + F[:, i] * dt[i]
        if not np.all(np.isfinite(Y[:, i])):
            raise NumericalError(f"non-finite Y at step {i}")
        resid = target - cont - np.sum(Z[:, i, :] * dW, axis=1) - np.sum(V[:, i, :] * dN, axis=1)
        diags.append({
            "step": i,
            "degree": deg,
            "fallback": deg != basis.degree and basis.kind == "polynomial",
            "cond": proj.cond,
            "joint_cond": joint_cond,
            "ridge": proj.ridge,
            "residual_rms": float(np.sqrt(np.mean(resid**2))),
        })
    diags.reverse()
    return BsdeSolution(Y, Z, V, F, xi, states, bundle, basis, diags)


# -- outer approximation loop ----------------------------------------------------


@dataclass
class SolveReport:
    solution: BsdeSolution
    table: list
    norms: Optional["NormTable"] = None
    warnings: list = field(default_factory=list)
    iterates: list = field(default_factory=list)

    def to_dict(self):
        out = {"solution": self.solution.summary(), "table": self.table, "warnings": self.warnings}
        if self.norms is not None:
            out["norms"] = self.norms.to_dict()
        return out


def solve_log_growth(spec: GeneratorSpec, xi, states: StatePaths, bundle: Optional[PathBundle] = None,
                     basis: RegressionBasis = RegressionBasis(), n_schedule: Sequence[int] = (4, 8, 16, 32),
                     alpha_exp: float = 1.0, tol: float = 0.0, beta: float = 3.0, rho_radius: float = 5.0,
                     refine: int = 3, scheme: str = "joint", keep_iterates: bool = False,
                     rho_count: int = 1024, seed: int = 0) -> SolveReport:
    """Solve with f_n = mollify(spec, n) along the schedule, tracking gaps between iterates.

    Stops once the sup-gap between consecutive solutions drops below ``tol``
    (``tol = 0`` runs the whole schedule).
    """
    sched = list(n_schedule)
    if not sched or any(b <= a for a, b in zip(sched, sched[1:])):
        raise ConfigError("n_schedule must be nonempty and strictly increasing", field="solver.n_schedule")
    bundle = states.bundle if bundle is None else bundle
    table, notes, iterates = [], [], []
    prev = None
    sol = None
    for n in sched:
        fn = mollify(spec, n, alpha_exp=alpha_exp, refine=refine)
        if fn.lipschitz_certificate is None:
            raise ConfigError(f"mollified driver at n={n} has no Lipschitz certificate", field="generator")
        sol = solve_lipschitz(fn, xi, states, bundle, basis, scheme)
        row = {"n": n, "y0": sol.y0, "certificate": fn.lipschitz_certificate}
        if not spec.random:
            row["rho_N"] = rho_N(fn, spec, rho_radius, bundle.grid, count=rho_count, seed=seed)
        if prev is not None:
            row["sup_gap"] = float(np.max(np.abs(sol.Y - prev.Y)))
            row["cauchy_gap"] = cauchy_gap(sol, prev, beta)
        table.append(row)
        if keep_iterates:
            iterates.append(sol)
        if prev is not None and row["sup_gap"] < tol:
            break
        prev = sol
    gaps = [r["sup_gap"] for r in table if "sup_gap" in r]
    if any(b > a for a, b in zip(gaps[1:], gaps[2:])):
        notes.append("outer sup-gaps are not monotone after the first two iterations")
    return SolveReport(sol, table, warnings=notes, iterates=iterates)


# -- norms and gaps -----------------------------------------------------------------


@dataclass
class NormTable:
    lhs: float
    rhs_base: float
    K_hat: float
    degenerate: bool
    sup_y: float
    z_energy: float
    v_energy: float
    A: float

    def to_dict(self):
        return dict(self.__dict__)


def apriori_norms(sol: BsdeSolution, w: ThetaWeight, eta: Optional[Callable] = None, xi=None) -> NormTable:
    """Sample versions of both sides of the theta-weighted a priori estimate and their ratio."""
    times, dt = sol.grid.times, sol.grid.dt
    xi = sol.xi if xi is None else np.asarray(xi, dtype=float).reshape(-1)
    th = theta(times, w)
    sup_y = np.max(np.abs(sol.Y) ** th[None, :], axis=1)
    z_en = np.sum(np.sum(sol.Z[:, :-1, :] ** 2, axis=2) * dt, axis=1)
    if sol.bundle.n_marks:
        lam = sol.bundle.measure.weights
        v_en = np.sum(np.sum(sol.V[:, :-1, :] ** 2 * lam, axis=2) * dt, axis=1)
    else:
        v_en = np.zeros_like(z_en)
    lhs = float(np.mean(sup_y + z_en + v_en))
    rhs = np.abs(xi) ** th[-1]
    if eta is not None:
        P = xi.shape[0]
        for i in range(len(dt)):
            e = np.broadcast_to(np.abs(np.asarray(eta(times[i]), dtype=float)), (P,))
            rhs = rhs + e ** th[i] * dt[i]
    rhs = float(np.mean(rhs))
    degenerate = rhs == 0.0
    if degenerate:
        K_hat = math.inf if lhs > 0 else math.nan
    else:
        K_hat = lhs / rhs
    return NormTable(lhs, rhs, K_hat, degenerate, float(np.mean(sup_y)), float(np.mean(z_en)),
                     float(np.mean(v_en)), w.A)


def beta_band(alpha_bar: float, kappa: float, A: float, T: float):
    """Admissible exponents: 2 < 2/(2 - alpha_bar) <= beta <= theta(T)(2 - alpha_bar - kappa)/2 + 1."""
    if not 1.0 < alpha_bar < 2.0:
        raise DomainError("alpha_bar must lie in (1, 2)")
    if not 0.0 < kappa < 2.0 - alpha_bar:
        raise DomainError("kappa must satisfy 0 < kappa < 2 - alpha_bar")
    low = 2.0 / (2.0 - alpha_bar)
    high = theta(T, ThetaWeight(A)) * (2.0 - alpha_bar - kappa) / 2.0 + 1.0
    return low, high


def beta_diagnostics(beta: float, alpha_bar: float, kappa: float, A: float, T: float) -> list:
    out = []
    if not beta > 2:
        out.append(f"beta={beta} outside admissible band: beta must exceed 2")
    if not 1.0 < alpha_bar < 2.0:
        out.append(f"alpha_bar={alpha_bar} must lie in (1, 2)")
        return out
    if not 0.0 < kappa < 2.0 - alpha_bar:
        out.append(f"kappa={kappa} violates the constraint 0 < kappa < 2 - alpha_bar = {2.0 - alpha_bar:g}")
        return out
    if not A > 0:
        out.append(f"A={A} must be positive")
        return out
    low, high = beta_band(alpha_bar, kappa, A, T)
    if beta > 2 and not (low <= beta <= high):
        out.append(f"beta={beta} outside admissible band [{low:g}, {high:g}]")
    return out


def cauchy_window(beta: float, M: float, kappa: float, r: float) -> float:
    """Upper bound kappa / (r B) on the backward window length, B = bM + 2bM^2 + 3^(b-1) b M^2/(b-1)."""
    B = beta * M + 2 * beta * M**2 + 3 ** (beta - 1) * beta * M**2 / (beta - 1)
    return math.inf if B == 0 else kappa / (r * B)


def cauchy_gap(a: BsdeSolution, b: BsdeSolution, beta: float) -> float:
    """mean over paths of sup_i |Y^a_i - Y^b_i|^beta."""
    if not beta > 2:
        raise DomainError("beta must exceed 2")
    if not np.array_equal(a.grid.times, b.grid.times) or a.Y.shape != b.Y.shape:
        raise ConfigError("solutions live on different grids", field="cauchy_gap")
    if a.bundle is not b.bundle and not a.bundle.same_noise(b.bundle):
        raise ConfigError("solutions were computed on different bundles", field="cauchy_gap")
    return float(np.mean(np.max(np.abs(a.Y - b.Y), axis=1) ** beta))


# -- residual diagnostics -------------------------------------------------------------


@dataclass
class ResidualReport:
    residuals: np.ndarray
    step_mean: np.ndarray
    drift_bias: np.ndarray
    cond_mean: np.ndarray

    @property
    def bias_bound(self) -> float:
        """Accumulated magnitude of the state-conditional residual means."""
        return float(np.sum(self.drift_bias))

    @property
    def max_cond_mean(self) -> float:
        return float(np.max(self.cond_mean))

    def to_dict(self):
        return {
            "bias_bound": self.bias_bound,
            "max_cond_mean": self.max_cond_mean,
            "step_mean": self.step_mean.tolist(),
            "drift_bias": self.drift_bias.tolist(),
            "cond_mean": self.cond_mean.tolist(),
        }


def martingale_residual(sol: BsdeSolution, f: GeneratorSpec, bundle: Optional[PathBundle] = None,
                        Z: Optional[np.ndarray] = None) -> ResidualReport:
    """r_i = Y_{i+1} - Y_i + f(t_i, Y_i, Z_i, V_i) dt_i - Z_i dW_i - sum_k V_ik Ntilde_ik.

    ``drift_bias`` is the RMS of the projection of r_i on phi(x_i); ``cond_mean``
    the RMS of its projection on [phi(x_i), phi(x_i) dW_i, phi(x_i) Ntilde_i],
    which also picks up errors in Z and V. ``Z`` overrides the solution's Z.
    """
    bundle = sol.bundle if bundle is None else bundle
    Z = sol.Z if Z is None else Z
    times, dt = bundle.grid.times, bundle.grid.dt
    ntil = bundle.compensated_counts()
    P, n = sol.Y.shape[0], sol.Y.shape[1] - 1
    R = np.empty((P, n))
    drift = np.empty(n)
    cm = np.empty(n)
    for i in range(n):
        x = sol.states.x[:, i, :]
        fi = f.eval(times[i], sol.Y[:, i], Z[:, i, :], sol.V[:, i, :], x)
        r = (sol.Y[:, i + 1] - sol.Y[:, i] + fi * dt[i] - np.sum(Z[:, i, :] * bundle.dW[:, i, :], axis=1)
             - np.sum(sol.V[:, i, :] * ntil[:, i, :], axis=1))
        R[:, i] = r
        proj, _ = _projector(sol.basis, x)
        A = proj.A
        drift[i] = float(np.sqrt(np.mean(proj.fit(r) ** 2)))
        blocks = [A] + [A * bundle.dW[:, i, [j]] for j in range(bundle.d)]
        blocks += [A * ntil[:, i, [k]] for k in range(bundle.n_marks)]
        J = _Projector.build(np.concatenate(blocks, axis=1))
        cm[i] = float(np.sqrt(np.mean(J.fit(r) ** 2)))
    return ResidualReport(R, R.mean(axis=0), drift, cm)


# -- export ------------------------------------------------------------------------


def write_solution_csv(sol: BsdeSolution, path, max_paths: Optional[int] = None) -> None:
    """One row per (path, step): path, step, t, Y, Z_0..Z_{d-1}, V_0..V_{K-1}."""
    P = sol.Y.shape[0] if max_paths is None else min(max_paths, sol.Y.shape[0])
    n1 = sol.Y.shape[1]
    d, K = sol.Z.shape[2], sol.V.shape[2]
    header = ["path", "step", "t", "Y"] + [f"Z_{j}" for j in range(d)] + [f"V_{k}" for k in range(K)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for p in range(P):
            for i in range(n1):
                wr.writerow([p, i, repr(float(sol.grid.times[i])), repr(float(sol.Y[p, i]))]
                            + [repr(float(v)) for v in sol.Z[p, i]] + [repr(float(v)) for v in sol.V[p, i]])


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
