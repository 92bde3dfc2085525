"""Stochastic control with drift and jump-intensity tilts.

The controller picks ubar in D1 (drift phi) and ucheck in D2 (jump tilt g) to
maximize J(u) = E^u[int c dt + int sum_k h lambda_k dt + xi(x_T)].  The
Hamiltonians

    H1(t, x, z, ubar)   = z . sigma^{-1}(t, x) phi(t, x, ubar) + c(t, x, ubar)
    H2(t, x, nu, ucheck) = sum_k (nu_k g(t, x, ucheck, w_k) + h(t, x, ucheck, w_k)) lambda_k

are maximized by exhaustive scan over the finite grids D1, D2 (lowest index wins
ties) and their maxima H* = H1* + H2* drive a BSDE whose value Y*_0 is the
optimal payoff.  Everything here is batched over paths: x is (P, d), z is
(P, d), nu is (P, K), ubar is (P, q1) and ucheck is (P, q2).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .engine import BsdeSolution, RegressionBasis, martingale_residual, solve_lipschitz
from .errors import ConfigError, SimulationError, SingularMatrixError
from .forward import CoefficientSet, ConstantPolicy, Policy, StatePaths, simulate_controlled, simulate_uncontrolled
from .generators import GeneratorSpec, H3Certificate
from .kernel import MarkMeasure, PathBundle, TimeGrid, sample_bundle

Z95 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class ControlProblem:
    coeffs: CoefficientSet
    terminal: Callable
    D1: np.ndarray
    D2: np.ndarray
    x0: tuple = (0.0,)
    measure: Optional[MarkMeasure] = None
    c: Optional[Callable] = None
    h: Optional[Callable] = None
    K2: float = 1.0
    C_h: float = 1.0
    name: str = "problem"

    def __post_init__(self):
        D1 = np.asarray(self.D1, dtype=float)
        D2 = np.asarray(self.D2, dtype=float)
        D1 = D1.reshape(-1, 1) if D1.ndim == 1 else D1
        D2 = D2.reshape(-1, 1) if D2.ndim == 1 else D2
        if D1.shape[0] == 0 or D2.shape[0] == 0:
            raise ConfigError("control grids must be nonempty", field="controls")
        object.__setattr__(self, "D1", D1)
        object.__setattr__(self, "D2", D2)
        for name in ("K2", "C_h"):
            if not getattr(self, name) > 0:
                raise ConfigError("declared constants must be strictly positive", field=name)
        if self.coeffs.g is not None and self.measure is None:
            raise ConfigError("a jump tilt needs a mark measure", field="marks")
        if len(self.x0) != self.coeffs.d:
            raise ConfigError(f"x0 has dimension {len(self.x0)}, expected {self.coeffs.d}", field="x0")

    @property
    def d(self) -> int:
        return self.coeffs.d

    @property
    def K(self) -> int:
        return 0 if self.measure is None else self.measure.n_marks

    # -- pieces evaluated on a batch ------------------------------------------------

    def sigma_inverse(self, t, x):
        """sigma^{-1}(t, x), shape (P, d, d); a singular sigma raises with the offending point."""
        sig = np.asarray(self.coeffs.sigma(t, x), dtype=float)
        if self.d == 1:
            s = sig[:, 0, 0]
            bad = s == 0
            inv = None if np.any(bad) else (1.0 / s)[:, None, None]
        else:
            try:
                inv = np.linalg.inv(sig)
            except np.linalg.LinAlgError:
                inv = None
            bad = np.abs(np.linalg.det(sig)) == 0 if inv is None else ~np.all(np.isfinite(inv), axis=(1, 2))
            inv = None if np.any(bad) else inv
        if inv is None:
            j = int(np.argmax(bad)) if np.ndim(bad) else 0
            raise SingularMatrixError(f"sigma is singular at t={t}, x={x[j].tolist()}", point=(t, x[j].tolist()))
        return inv

    def drift_ratio(self, t, x, ubar, sigma_inv=None):
        """sigma^{-1} phi, shape (P, d)."""
        P = x.shape[0]
        if self.coeffs.phi is None:
            return np.zeros((P, self.d))
        inv = self.sigma_inverse(t, x) if sigma_inv is None else sigma_inv
        phi = np.asarray(self.coeffs.phi(t, x, ubar), dtype=float)
        if self.d == 1:
            return inv[:, 0, :] * phi
        return np.einsum("pij,pj->pi", inv, phi)

    def running_reward(self, t, x, ubar):
        if self.c is None:
            return np.zeros(x.shape[0])
        return np.broadcast_to(np.asarray(self.c(t, x, ubar), dtype=float), (x.shape[0],))

    def tilt(self, t, x, ucheck):
        if self.coeffs.g is None or self.K == 0:
            return np.zeros((x.shape[0], self.K))
        return np.asarray(self.coeffs.g(t, x, ucheck, self.measure.marks), dtype=float)

    def jump_reward(self, t, x, ucheck):
        if self.h is None or self.K == 0:
            return np.zeros((x.shape[0], self.K))
        return np.asarray(self.h(t, x, ucheck, self.measure.marks), dtype=float)

    def payoff_rate(self, t, x, ubar, ucheck):
        """c + sum_k h lambda_k, shape (P,)."""
        rate = self.running_reward(t, x, ubar)
        if self.K:
            rate = rate + self.jump_reward(t, x, ucheck) @ self.measure.weights
        return rate

    def xi(self, xT):
        return np.asarray(self.terminal(xT), dtype=float).reshape(-1)


def _rows(a, P, width):
    a = np.asarray(a, dtype=float)
    if a.ndim <= 1:
        a = a.reshape(-1, width) if a.size == width else a.reshape(P, width)
    return np.broadcast_to(a, (P, width))


def _batch(problem, x, z=None, nu=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != problem.d:
        x = x.reshape(-1, problem.d)
    P = x.shape[0]
    out = [x]
    if z is not None:
        out.append(_rows(z, P, problem.d))
    if nu is not None:
        out.append(_rows(nu, P, problem.K))
    return out


def hamiltonian1(problem: ControlProblem, t, x, z, ubar, sigma_inv=None):
    x, z = _batch(problem, x, z)
    ub = _rows(ubar, x.shape[0], problem.D1.shape[1])
    return np.sum(z * problem.drift_ratio(t, x, ub, sigma_inv), axis=1) + problem.running_reward(t, x, ub)


def hamiltonian2(problem: ControlProblem, t, x, nu, ucheck):
    x, nu = _batch(problem, x, None, nu) if problem.K else (_batch(problem, x)[0], None)
    P = x.shape[0]
    if problem.K == 0:
        return np.zeros(P)
    uc = _rows(ucheck, P, problem.D2.shape[1])
    lam = problem.measure.weights
    return (nu * problem.tilt(t, x, uc) + problem.jump_reward(t, x, uc)) @ lam


def _scan(values_per_point):
    """Stack per-grid-point values to (P, m) and take the first argmax per row."""
    table = np.stack(values_per_point, axis=1)
    idx = np.argmax(table, axis=1)
    return table[np.arange(table.shape[0]), idx], idx


def maximize_hamiltonians(problem: ControlProblem, t, x, z, nu=None, return_index: bool = False):
    """(H*, ubar*, ucheck*) with the maximizers taken from D1 and D2 (lowest index on ties)."""
    x, z = _batch(problem, x, z)
    P = x.shape[0]
    if nu is None:
        nu = np.zeros((P, problem.K))
    inv = problem.sigma_inverse(t, x) if problem.coeffs.phi is not None and problem.D1.shape[0] > 1 else None
    h1, i1 = _scan([hamiltonian1(problem, t, x, z, np.broadcast_to(u, (P, u.size)), inv) for u in problem.D1])
    h2, i2 = _scan([hamiltonian2(problem, t, x, nu, np.broadcast_to(u, (P, u.size))) for u in problem.D2])
    out = (h1 + h2, problem.D1[i1], problem.D2[i2])
    return out + (i1, i2) if return_index else out


# -- H* as a BSDE driver ------------------------------------------------------------


def _tilt_envelope(problem: ControlProblem) -> np.ndarray:
    """Per-mark bound on |g| from alpha1 |w| on small marks and alpha2 on large ones."""
    co = problem.coeffs
    if problem.K == 0 or co.g is None:
        return np.zeros(problem.K)
    if co.alpha1 is None or co.alpha2 is None:
        raise ConfigError("a jump tilt needs declared alpha1 and alpha2", field="coefficients")
    r = problem.measure.mark_norms
    return np.where(r <= 1.0, co.alpha1 * r, co.alpha2)


@dataclass(frozen=True)
class HstarConstants:
    C: float
    c0: float
    c1: float
    lipschitz: float
    tilt_norm: float

    def to_dict(self):
        return dict(self.__dict__)


def hstar_constants(problem: ControlProblem) -> HstarConstants:
    """Envelope and Lipschitz constants of H* implied by the declared bounds.

    |H1*| <= C_phi |z| + K2 (1 + |x|) and C_phi |z| <= C_phi + C_phi |z| sqrt|ln|z||;
    |H2*| <= G ||nu|| + C_h sqrt(total rate) (1 + |x|) with G = ||tilt envelope||.
    H* is Lipschitz in (z, nu) with constant sqrt(C_phi^2 + G^2) in the lambda-norm,
    and the Euclidean nu-constant is ||envelope * lambda||.
    """
    co = problem.coeffs
    if co.phi is not None and co.C_phi is None:
        raise ConfigError("a drift control needs a declared C_phi bound on |sigma^-1 phi|", field="coefficients")
    c_phi = co.C_phi if co.phi is not None else 0.0
    env = _tilt_envelope(problem)
    if problem.K:
        lam = problem.measure.weights
        G = float(np.sqrt(np.sum(env**2 * lam)))
        G_euclid = float(np.sqrt(np.sum((env * lam) ** 2)))
        h_part = problem.C_h * math.sqrt(problem.measure.total_rate) if problem.h is not None else 0.0
    else:
        G = G_euclid = 0.0
        h_part = 0.0
    c_part = problem.K2 if problem.c is not None else 0.0
    C = c_phi + c_part + h_part
    return HstarConstants(C=C, c0=c_phi, c1=G, lipschitz=math.sqrt(c_phi**2 + G_euclid**2), tilt_norm=G)


def build_hstar_generator(problem: ControlProblem) -> GeneratorSpec:
    """H*(t, x, z, nu) as a driver; the state x arrives through the ``state`` argument."""
    k = hstar_constants(problem)

    def fn(t, y, z, nu, state):
        if state is None:
            state = np.broadcast_to(np.asarray(problem.x0, dtype=float), (y.shape[0], problem.d))
        return maximize_hamiltonians(problem, t, state, z, nu)[0]

    def eta(t, state):
        if state is None:
            return k.C
        return k.C * (1.0 + np.linalg.norm(np.atleast_2d(state), axis=1)) ** 2

    return GeneratorSpec(fn, problem.d, problem.K, problem.measure, eta=eta, c0=k.c0, c1=k.c1,
                         lipschitz_certificate=k.lipschitz, active=(False, True, problem.K > 0), random=True,
                         name=f"hstar[{problem.name}]", params=k.to_dict())


def hstar_h3_certificate(problem: ControlProblem, N_min: float = 3.0) -> H3Certificate:
    """Monotonicity certificate for H*, valid for N >= N_min > e.

    H* does not depend on y and is Lipschitz in (z, nu), so the inequality
    holds with A_N = ln N (r = 1) and M = max(C_phi, G) / sqrt(ln ln N_min).
    v1 = max over D1 of |phi|^2 and v2 = max over D2 of g pointwise.
    """
    if not N_min > math.e:
        raise ConfigError("N_min must exceed e so that ln N > 1", field="N_min")
    k = hstar_constants(problem)
    M = max(k.c0, k.tilt_norm) / math.sqrt(math.log(math.log(N_min)))

    def v1(t, state):
        if state is None or problem.coeffs.phi is None:
            return 0.0
        x = np.atleast_2d(state)
        P = x.shape[0]
        vals = [np.sum(np.asarray(problem.coeffs.phi(t, x, np.broadcast_to(u, (P, u.size))), dtype=float) ** 2, axis=1)
                for u in problem.D1]
        return np.max(np.stack(vals, axis=1), axis=1)

    def v2(t, state):
        if problem.K == 0 or state is None:
            return None
        x = np.atleast_2d(state)
        P = x.shape[0]
        vals = [np.abs(problem.tilt(t, x, np.broadcast_to(u, (P, u.size)))) for u in problem.D2]
        return np.max(np.stack(vals, axis=0), axis=0) ** 2

    return H3Certificate(M=M, A_N=lambda N: math.log(N), r=1.0, v1=v1, v2=v2)


# -- Girsanov density ---------------------------------------------------------------


@dataclass(eq=False)
class GirsanovWeights:
    L: np.ndarray
    policy: str

    @property
    def terminal(self) -> np.ndarray:
        return self.L[:, -1]

    def normalization(self, k: float = 4.0):
        """(mean of L_T, its standard error, |mean - 1| <= k se)."""
        LT = self.terminal
        m = float(np.mean(LT))
        se = float(np.std(LT, ddof=1) / math.sqrt(LT.shape[0]))
        return m, se, abs(m - 1.0) <= k * se


def girsanov_density(problem: ControlProblem, policy: Policy, states: StatePaths,
                     bundle: Optional[PathBundle] = None) -> GirsanovWeights:
    """Discrete Doleans-Dade exponential along uncontrolled paths.

    L_{i+1} = L_i exp(a.dW - |a|^2 dt / 2) prod_k (1 + g_k)^{N_ik} exp(-sum_k g_k lambda_k dt),
    a = sigma^{-1} phi; the product is taken in log space.
    """
    bundle = states.bundle if bundle is None else bundle
    P, n = bundle.n_paths, bundle.n_steps
    times, dt = bundle.grid.times, bundle.grid.dt
    logL = np.zeros((P, n + 1))
    for i in range(n):
        x = states.x[:, i, :]
        ubar, ucheck = policy.controls(i, times[i], x)
        a = problem.drift_ratio(times[i], x, ubar)
        inc = np.sum(a * bundle.dW[:, i, :], axis=1) - 0.5 * np.sum(a**2, axis=1) * dt[i]
        if problem.K:
            g = problem.tilt(times[i], x, ucheck)
            if np.any(g <= -1.0):
                j = int(np.argmax(np.any(g <= -1.0, axis=1)))
                raise SimulationError("jump tilt g <= -1 makes the density non-positive", path=j, step=i)
            counts = bundle.jump_counts[:, i, :]
            inc = inc + np.sum(counts * np.log1p(g), axis=1) - (g @ problem.measure.weights) * dt[i]
        logL[:, i + 1] = logL[:, i] + inc
    return GirsanovWeights(np.exp(logL), getattr(policy, "name", type(policy).__name__))


# -- policy values ------------------------------------------------------------------


@dataclass
class PolicyValue:
    policy: str
    direct: float
    direct_se: float
    reweighted: Optional[float] = None
    reweighted_se: Optional[float] = None

    @property
    def gap(self) -> Optional[float]:
        return None if self.reweighted is None else abs(self.direct - self.reweighted)

    @property
    def combined_ci(self) -> Optional[float]:
        if self.reweighted is None:
            return None
        return Z95 * math.hypot(self.direct_se, self.reweighted_se)

    @property
    def agree(self) -> Optional[bool]:
        return None if self.reweighted is None else self.gap <= self.combined_ci

    def to_dict(self):
        return {"policy": self.policy, "direct": self.direct, "direct_se": self.direct_se,
                "reweighted": self.reweighted, "reweighted_se": self.reweighted_se, "gap": self.gap,
                "combined_ci": self.combined_ci, "agree": self.agree}


def _payoffs(problem, policy, states):
    times, dt = states.bundle.grid.times, states.bundle.grid.dt
    total = problem.xi(states.terminal).copy()
    for i in range(len(dt)):
        x = states.x[:, i, :]
        ubar, ucheck = policy.controls(i, times[i], x)
        total += problem.payoff_rate(times[i], x, ubar, ucheck) * dt[i]
    return total


def _mean_se(v):
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.shape[0]))


def controlled_states(problem: ControlProblem, policy: Policy, bundle: PathBundle) -> StatePaths:
    if problem.coeffs.phi is None and problem.coeffs.g is None:
        return simulate_uncontrolled(problem.coeffs, problem.x0, bundle)
    return simulate_controlled(problem.coeffs, policy, problem.x0, bundle)


def evaluate_policy(problem: ControlProblem, policy: Policy, bundle: PathBundle, reweight: bool = True,
                    base_states: Optional[StatePaths] = None) -> PolicyValue:
    """J(u) by direct controlled simulation and, optionally, by Girsanov reweighting of uncontrolled paths."""
    direct = _payoffs(problem, policy, controlled_states(problem, policy, bundle))
    value = PolicyValue(getattr(policy, "name", type(policy).__name__), *_mean_se(direct))
    if reweight:
        base = simulate_uncontrolled(problem.coeffs, problem.x0, bundle) if base_states is None else base_states
        L = girsanov_density(problem, policy, base, bundle).terminal
        value.reweighted, value.reweighted_se = _mean_se(L * _payoffs(problem, policy, base))
    return value


# -- feedback policy extracted from (Z*, V*) ---------------------------------------------


@dataclass(frozen=True, eq=False)
class FeedbackPolicy(Policy):
    """Piecewise-constant feedback on (t_i, bins of the first state coordinate)."""

    times: np.ndarray
    edges: tuple
    idx1: np.ndarray
    idx2: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    name: str = "feedback"

    def cell(self, i, x):
        return np.searchsorted(self.edges[i], x[:, 0], side="right")

    def controls(self, i, t, x):
        if not 0 <= i < len(self.edges):
            raise ConfigError(f"step {i} outside the feedback table", field="policy")
        if not math.isclose(t, float(self.times[i]), rel_tol=0, abs_tol=1e-12):
            raise ConfigError("feedback policy evaluated on a different time grid", field="policy")
        c = self.cell(i, x)
        return self.D1[self.idx1[i][c]], self.D2[self.idx2[i][c]]

    def write_csv(self, path) -> None:
        q1, q2 = self.D1.shape[1], self.D2.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["step", "t", "x_lo", "x_hi"] + [f"ubar_{j}" for j in range(q1)]
                        + [f"ucheck_{j}" for j in range(q2)])
            for i, e in enumerate(self.edges):
                bounds = np.concatenate([[-np.inf], e, [np.inf]])
                for b in range(len(bounds) - 1):
                    wr.writerow([i, repr(float(self.times[i])), repr(float(bounds[b])), repr(float(bounds[b + 1]))]
                                + [repr(float(v)) for v in self.D1[self.idx1[i][b]]]
                                + [repr(float(v)) for v in self.D2[self.idx2[i][b]]])


def extract_feedback_policy(problem: ControlProblem, sol: BsdeSolution, n_bins: int = 20) -> FeedbackPolicy:
    """Maximize the Hamiltonians at bin-averaged (x, Z*, V*) for every step and state bin."""
    times = sol.grid.times
    n = sol.Y.shape[1] - 1
    edges, idx1, idx2 = [], [], []
    for i in range(n):
        x = sol.states.x[:, i, :]
        e = np.unique(np.quantile(x[:, 0], np.linspace(0, 1, n_bins + 1)[1:-1]))
        cell = np.searchsorted(e, x[:, 0], side="right")
        nb = e.size + 1
        counts = np.bincount(cell, minlength=nb).astype(float)
        safe = np.maximum(counts, 1.0)

        def avg(a):
            return np.stack([np.bincount(cell, weights=a[:, j], minlength=nb) for j in range(a.shape[1])], axis=1) / safe[:, None]

        xb, zb = avg(x), avg(sol.Z[:, i, :])
        vb = avg(sol.V[:, i, :]) if problem.K else np.zeros((nb, 0))
        # empty cells inherit the nearest populated neighbour's averages
        filled = np.nonzero(counts > 0)[0]
        near = filled[np.clip(np.searchsorted(filled, np.arange(nb)), 0, filled.size - 1)]
        xb, zb, vb = xb[near], zb[near], vb[near]
        _, _, _, a1, a2 = maximize_hamiltonians(problem, times[i], xb, zb, vb, return_index=True)
        edges.append(e)
        idx1.append(a1)
        idx2.append(a2)
    return FeedbackPolicy(times[:-1].copy(), tuple(edges), np.array(idx1, dtype=object), np.array(idx2, dtype=object),
                          problem.D1, problem.D2, name="u*")


# -- verification -------------------------------------------------------------------------


def default_challengers(problem: ControlProblem, n_random: int = 20, seed: int = 0) -> list:
    """Constant policies at the corners of D1 x D2 plus uniform draws from their bounding boxes."""
    out = []
    corners = sorted({(a, b) for a in (0, problem.D1.shape[0] - 1) for b in (0, problem.D2.shape[0] - 1)})
    for a, b in corners:
        out.append(ConstantPolicy(tuple(problem.D1[a]), tuple(problem.D2[b]),
                                  name=f"corner[{problem.D1[a].tolist()},{problem.D2[b].tolist()}]"))
    rng = np.random.default_rng(seed)
    lo1, hi1 = problem.D1.min(axis=0), problem.D1.max(axis=0)
    lo2, hi2 = problem.D2.min(axis=0), problem.D2.max(axis=0)
    for r in range(n_random):
        u1 = rng.uniform(lo1, hi1)
        u2 = rng.uniform(lo2, hi2)
        out.append(ConstantPolicy(tuple(u1.tolist()), tuple(u2.tolist()), name=f"random[{r}]"))
    return out


@dataclass
class OptimalityReport:
    y0: float
    y0_se: float
    solver_bias: float
    optimal: PolicyValue
    challengers: list
    value_match: bool
    dominance: list
    scan: Optional[list] = None
    policy: Optional[FeedbackPolicy] = None
    solution: Optional[BsdeSolution] = None

    @property
    def solver_tolerance(self) -> float:
        return self.solver_bias + 3.0 * self.y0_se

    @property
    def verdict(self) -> str:
        return "pass" if self.value_match and all(self.dominance) else "fail"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "y0": self.y0,
            "y0_se": self.y0_se,
            "solver_bias": self.solver_bias,
            "solver_tolerance": self.solver_tolerance,
            "value_match": self.value_match,
            "optimal": self.optimal.to_dict(),
            "challengers": [dict(c.to_dict(), dominated=bool(ok)) for c, ok in zip(self.challengers, self.dominance)],
        }

    def table(self) -> str:
        lines = [f"Y*0 = {self.y0:.6f} +/- {self.y0_se:.6f} (solver bias bound {self.solver_bias:.3g})",
                 f"J(u*) = {self.optimal.direct:.6f} +/- {self.optimal.direct_se:.6f}  value match: {self.value_match}",
                 f"{'policy':<40} {'J(u)':>12} {'se':>10} {'ok':>4}"]
        for c, ok in zip(self.challengers, self.dominance):
            lines.append(f"{c.policy:<40} {c.direct:>12.6f} {c.direct_se:>10.6f} {'yes' if ok else 'NO':>4}")
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines)


def verify_optimality(problem: ControlProblem, grid: TimeGrid, n_paths: int, seed: int,
                      challengers: Optional[Sequence[Policy]] = None, basis: RegressionBasis = RegressionBasis(),
                      n_bins: int = 20, reweight: bool = False, keep_solution: bool = False) -> OptimalityReport:
    """Solve the H* BSDE, extract u*, and compare Y*_0, J(u*) and challenger values.

    The BSDE is solved on the bundle for ``seed``; policies are evaluated on an
    independent bundle (``seed + 1``) shared by all policies.
    """
    challengers = default_challengers(problem, seed=seed) if challengers is None else list(challengers)
    if not challengers:
        raise ConfigError("at least one challenger policy is required", field="challengers")
    bundle = sample_bundle(grid, problem.d, n_paths, seed, problem.measure)
    states = simulate_uncontrolled(problem.coeffs, problem.x0, bundle)
    spec = build_hstar_generator(problem)
    sol = solve_lipschitz(spec, problem.xi(states.terminal), states, bundle, basis)
    bias = martingale_residual(sol, spec, bundle).bias_bound
    policy = extract_feedback_policy(problem, sol, n_bins)
    ebundle = sample_bundle(grid, problem.d, n_paths, seed + 1, problem.measure)
    base = simulate_uncontrolled(problem.coeffs, problem.x0, ebundle) if reweight else None
    opt = evaluate_policy(problem, policy, ebundle, reweight, base)
    values = [evaluate_policy(problem, p, ebundle, reweight, base) for p in challengers]
    y0, y0_se = sol.y0, sol.y0_se
    match = abs(y0 - opt.direct) <= Z95 * opt.direct_se + bias + 3.0 * y0_se
    dom = [v.direct <= opt.direct + Z95 * math.hypot(v.direct_se, opt.direct_se) for v in values]
    return OptimalityReport(y0, y0_se, bias, opt, values, bool(match), [bool(x) for x in dom], policy=policy,
                            solution=sol if keep_solution else None)


def constant_scan(problem: ControlProblem, bundle: PathBundle) -> list:
    """J for every constant policy on the grid D1 x D2 (direct method, shared noise)."""
    out = []
    for a in problem.D1:
        for b in problem.D2:
            out.append(evaluate_policy(problem, ConstantPolicy(tuple(a), tuple(b), name=f"const[{a.tolist()},{b.tolist()}]"),
                                       bundle, reweight=False))
    return out
