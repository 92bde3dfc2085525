"""Euler schemes for the jump-diffusion state and sampled checks on its coefficients.

Coefficient callables are batched over paths:

    sigma(t, x)                  x: (P, d)           -> (P, d, d)
    gamma(t, x, marks)           marks: (K, m)       -> (P, K, d)
    phi(t, x, ubar)              ubar: (P, q1)       -> (P, d)
    g(t, x, ucheck, marks)       ucheck: (P, q2)     -> (P, K)

Jump integrands are evaluated at the pre-step state, which plays the role of
the left limit ``x_{s-}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .errors import ConfigError, SimulationError
from .kernel import MarkMeasure, PathBundle


@dataclass(frozen=True)
class CoefficientSet:
    d: int
    sigma: Callable
    gamma: Optional[Callable] = None
    phi: Optional[Callable] = None
    g: Optional[Callable] = None
    C_sigma: float = 1.0
    C_inv: float = 1.0
    C_gamma: float = 1.0
    K1: Optional[float] = None
    C_phi: Optional[float] = None
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None

    def __post_init__(self):
        for name in ("C_sigma", "C_inv", "C_gamma", "K1", "C_phi", "alpha1", "alpha2"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError("declared constants must be strictly positive", field=name)

    def jump_field(self, t, x, measure: MarkMeasure):
        if self.gamma is None:
            return np.zeros((x.shape[0], measure.n_marks, self.d))
        return np.asarray(self.gamma(t, x, measure.marks), dtype=float)


@dataclass(frozen=True, eq=False)
class StatePaths:
    """x has shape (n_paths, n_steps + 1, d)."""

    x: np.ndarray
    bundle: PathBundle
    x0: np.ndarray

    def __post_init__(self):
        self.x.setflags(write=False)

    @property
    def terminal(self) -> np.ndarray:
        return self.x[:, -1, :]

    def at(self, i: int) -> np.ndarray:
        return self.x[:, i, :]

    def running_sup(self) -> np.ndarray:
        """||x||_t = sup_{s <= t} |x_s| on the grid, shape (n_paths, n_steps + 1)."""
        return np.maximum.accumulate(np.linalg.norm(self.x, axis=2), axis=1)


class Policy:
    """Feedback control u = (ubar, ucheck); subclasses implement :meth:`controls`."""

    def controls(self, i: int, t: float, x: np.ndarray):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPolicy(Policy):
    ubar: tuple = (0.0,)
    ucheck: tuple = (0.0,)
    name: str = "constant"

    def controls(self, i, t, x):
        P = x.shape[0]
        ub = np.broadcast_to(np.atleast_1d(np.asarray(self.ubar, dtype=float)), (P, len(np.atleast_1d(self.ubar))))
        uc = np.broadcast_to(np.atleast_1d(np.asarray(self.ucheck, dtype=float)), (P, len(np.atleast_1d(self.ucheck))))
        return ub, uc


@dataclass(frozen=True)
class FunctionPolicy(Policy):
    fn: Callable
    name: str = "feedback"

    def controls(self, i, t, x):
        return self.fn(i, t, x)


def _as_state(x0, d):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != d:
        raise ConfigError(f"x0 has dimension {x0.shape[0]}, expected {d}", field="x0")
    return x0


def _check_bundle(coeffs: CoefficientSet, bundle: PathBundle):
    if bundle.d != coeffs.d:
        raise ConfigError(f"bundle has Brownian dimension {bundle.d}, coefficients expect {coeffs.d}", field="d")
    if coeffs.gamma is not None and bundle.measure is None:
        raise ConfigError("jump coefficient given but the bundle carries no mark measure", field="marks")


def _diffusion(coeffs, t, x, dW):
    if coeffs.d == 0:
        return np.zeros_like(x)
    s = np.asarray(coeffs.sigma(t, x), dtype=float)
    return np.einsum("pij,pj->pi", s, dW)


def _assert_finite(x, step):
    bad = ~np.all(np.isfinite(x), axis=1)
    if np.any(bad):
        raise SimulationError("non-finite state", path=int(np.argmax(bad)), step=step)


def simulate_uncontrolled(coeffs: CoefficientSet, x0, bundle: PathBundle) -> StatePaths:
    """x_{i+1} = x_i + sigma dW_i + sum_k gamma(w_k) (N_ik - lambda_k dt_i)."""
    _check_bundle(coeffs, bundle)
    x0 = _as_state(x0, coeffs.d)
    P, n = bundle.n_paths, bundle.n_steps
    times, dt = bundle.grid.times, bundle.grid.dt
    out = np.empty((P, n + 1, coeffs.d))
    out[:, 0, :] = x0
    jumps = bundle.measure is not None and coeffs.gamma is not None
    for i in range(n):
        x = out[:, i, :]
        nxt = x + _diffusion(coeffs, times[i], x, bundle.dW[:, i, :])
        if jumps:
            comp = bundle.measure.weights * dt[i]
            ntil = bundle.jump_counts[:, i, :] - comp
            nxt = nxt + np.einsum("pk,pkd->pd", ntil, coeffs.jump_field(times[i], x, bundle.measure))
        _assert_finite(nxt, i + 1)
        out[:, i + 1, :] = nxt
    return StatePaths(out, bundle, x0)


def tilted_counts(counts, u, g, lam_dt):
    """Jump counts under the intensity (1 + g) lambda, coupled to the base counts.

    Where g > 0 extra Poisson(g lambda dt) events are superposed; where g < 0
    existing events are thinned with retention probability 1 + g. ``u`` holds the
    uniforms used for the inverse-CDF draws. g = 0 returns the base counts.
    """
    out = counts.copy()
    up = g > 0
    if np.any(up):
        extra = stats.poisson.ppf(u[up], (g * lam_dt)[up])
        out[up] += np.maximum(extra, 0).astype(out.dtype)
    down = (g < 0) & (counts > 0)
    if np.any(down):
        kept = stats.binom.ppf(u[down], counts[down], (1.0 + g)[down])
        out[down] = np.maximum(kept, 0).astype(out.dtype)
    return out


def simulate_controlled(coeffs: CoefficientSet, policy: Policy, x0, bundle: PathBundle) -> StatePaths:
    """Euler scheme for the state under the controlled measure.

    The bundle's dW plays the role of the controlled Brownian motion; jump
    counts are re-drawn at intensity (1 + g) lambda and compensated at that
    intensity, then the tilt gamma g lambda dt and the drift phi dt are added.
    With phi = 0 and g = 0 the output equals :func:`simulate_uncontrolled`.
    """
    if coeffs.phi is None and coeffs.g is None:
        raise ConfigError("controlled simulation needs phi and/or g", field="coefficients")
    _check_bundle(coeffs, bundle)
    x0 = _as_state(x0, coeffs.d)
    P, n = bundle.n_paths, bundle.n_steps
    times, dt = bundle.grid.times, bundle.grid.dt
    out = np.empty((P, n + 1, coeffs.d))
    out[:, 0, :] = x0
    jumps = bundle.measure is not None and coeffs.gamma is not None
    uniforms = bundle.tilt_uniforms() if (jumps and coeffs.g is not None) else None
    for i in range(n):
        t = times[i]
        x = out[:, i, :]
        ubar, ucheck = policy.controls(i, t, x)
        nxt = x + _diffusion(coeffs, t, x, bundle.dW[:, i, :])
        drift = np.zeros_like(x)
        if coeffs.phi is not None:
            drift = drift + np.asarray(coeffs.phi(t, x, ubar), dtype=float)
        if jumps:
            comp = bundle.measure.weights * dt[i]
            gam = coeffs.jump_field(t, x, bundle.measure)
            counts = bundle.jump_counts[:, i, :]
            if coeffs.g is not None:
                gv = np.asarray(coeffs.g(t, x, ucheck, bundle.measure.marks), dtype=float)
                if np.any(gv <= -1.0):
                    raise SimulationError("jump tilt g <= -1 gives a non-positive intensity", path=int(np.argmax(np.any(gv <= -1, axis=1))), step=i)
                counts = tilted_counts(counts, uniforms[:, i, :], gv, np.broadcast_to(comp, gv.shape))
                ntil = counts - (1.0 + gv) * comp
                drift = drift + np.einsum("pk,pkd->pd", gv * bundle.measure.weights, gam)
            else:
                ntil = counts - comp
            nxt = nxt + np.einsum("pk,pkd->pd", ntil, gam)
        nxt = nxt + drift * dt[i]
        _assert_finite(nxt, i + 1)
        out[:, i + 1, :] = nxt
    return StatePaths(out, bundle, x0)


# -- sampled coefficient conditions ------------------------------------------


@dataclass
class ConditionEntry:
    worst: float
    bound: Optional[float]
    passed: bool
    witness: Optional[list] = None

    def to_dict(self):
        return {"worst": self.worst, "bound": self.bound, "passed": self.passed, "witness": self.witness}


@dataclass
class ConditionReport:
    entries: dict = field(default_factory=dict)
    hard_violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.hard_violations and all(e.passed for e in self.entries.values())

    def flagged(self):
        return [k for k, e in self.entries.items() if not e.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "entries": {k: e.to_dict() for k, e in self.entries.items()},
            "hard_violations": self.hard_violations,
        }


def _record(report, name, ratios, bound, witness_rows, tol=1e-12):
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0:
        return
    j = int(np.nanargmax(ratios))
    worst = float(ratios[j])
    passed = bound is None or worst <= bound * (1 + tol) + tol
    report.entries[name] = ConditionEntry(worst, bound, passed, [np.asarray(w[j]).tolist() for w in witness_rows])


def _lnorm_vec(v, weights):
    # ||v||_{L^2_lambda} for a vector-valued mark function, v: (S, K, d)
    return np.sqrt(np.sum(np.sum(v**2, axis=-1) * weights, axis=-1))


def check_coefficient_conditions(coeffs: CoefficientSet, sample_cloud, measure: Optional[MarkMeasure] = None,
                                 c: Optional[Callable] = None, h: Optional[Callable] = None,
                                 K2: Optional[float] = None, C_h: Optional[float] = None) -> ConditionReport:
    """Worst sampled ratios for the Lipschitz/growth/invertibility conditions.

    ``sample_cloud`` is a tuple ``(t, x, x2, ubar, ucheck)`` of arrays with a
    common leading sample axis. Declared constants only get falsified here.
    """
    t, x, x2, ubar, ucheck = (np.asarray(a, dtype=float) for a in sample_cloud)
    S = t.shape[0]
    if S == 0:
        raise ConfigError("sample cloud is empty", field="sample_cloud")
    x = x.reshape(S, -1)
    x2 = x2.reshape(S, -1)
    ubar = ubar.reshape(S, -1)
    ucheck = ucheck.reshape(S, -1)
    report = ConditionReport()
    nx = np.linalg.norm(x, axis=1)
    dx = np.linalg.norm(x - x2, axis=1)
    dx_safe = np.where(dx > 0, dx, np.inf)

    def eval_rows(fn, *arrays):
        # callables take a scalar t, so evaluate batched per distinct time
        out = None
        for tv in np.unique(t):
            idx = np.nonzero(t == tv)[0]
            res = np.asarray(fn(tv, *(a[idx] for a in arrays)), dtype=float)
            if out is None:
                out = np.empty((S,) + res.shape[1:])
            out[idx] = res
        return out

    sig = eval_rows(coeffs.sigma, x)
    sig2 = eval_rows(coeffs.sigma, x2)
    op = lambda m: np.linalg.norm(m, ord=2, axis=(1, 2))
    _record(report, "sigma_lipschitz", op(sig - sig2) / dx_safe, coeffs.C_sigma, [t, x, x2])
    _record(report, "sigma_growth", op(sig) / (1 + nx), coeffs.C_sigma, [t, x])

    inv_norm = np.full(S, np.inf)
    sig_inv = np.full_like(sig, np.nan)
    for s in range(S):
        try:
            if np.linalg.cond(sig[s]) > 1e14:
                raise np.linalg.LinAlgError
            sig_inv[s] = np.linalg.inv(sig[s])
            inv_norm[s] = np.linalg.norm(sig_inv[s], ord=2)
        except np.linalg.LinAlgError:
            report.hard_violations.append({"condition": "sigma_invertible", "t": float(t[s]), "x": x[s].tolist()})
    finite = np.isfinite(inv_norm)
    if np.any(finite):
        _record(report, "sigma_inverse", inv_norm[finite], coeffs.C_inv, [t[finite], x[finite]])

    if measure is not None and coeffs.gamma is not None:
        gam = eval_rows(lambda tt, xx: coeffs.gamma(tt, xx, measure.marks), x)
        gam2 = eval_rows(lambda tt, xx: coeffs.gamma(tt, xx, measure.marks), x2)
        _record(report, "gamma_lipschitz", _lnorm_vec(gam - gam2, measure.weights) / dx_safe, coeffs.C_gamma, [t, x, x2])
        _record(report, "gamma_growth", _lnorm_vec(gam, measure.weights) / (1 + nx), coeffs.C_gamma, [t, x])

    if coeffs.phi is not None:
        ph = eval_rows(coeffs.phi, x, ubar)
        _record(report, "phi_growth", np.linalg.norm(ph, axis=1) / (1 + nx), coeffs.K1, [t, x, ubar])
        if np.any(finite):
            sp = np.einsum("sij,sj->si", sig_inv[finite], ph[finite])
            _record(report, "sigma_inv_phi", np.linalg.norm(sp, axis=1), coeffs.C_phi, [t[finite], x[finite], ubar[finite]])

    if c is not None:
        cv = eval_rows(c, x, ubar)
        _record(report, "c_growth", np.abs(cv) / (1 + nx), K2, [t, x, ubar])

    if measure is not None and coeffs.g is not None:
        gv = eval_rows(lambda tt, xx, uu: coeffs.g(tt, xx, uu, measure.marks), x, ucheck)
        wn = measure.mark_norms
        if coeffs.alpha1 is not None and coeffs.alpha2 is not None:
            env = np.where(wn <= 1.0, coeffs.alpha1 * wn, coeffs.alpha2)
            _record(report, "g_envelope", np.max(np.abs(gv) / env, axis=1), 1.0, [t, x, ucheck])
        else:
            _record(report, "g_envelope", np.max(np.abs(gv), axis=1), None, [t, x, ucheck])
        low = np.min(gv, axis=1)
        if np.any(low <= -1.0):
            s = int(np.argmin(low))
            report.hard_violations.append({"condition": "g_above_minus_one", "t": float(t[s]), "x": x[s].tolist(), "g": float(low[s])})

    if measure is not None and h is not None:
        hv = eval_rows(lambda tt, xx, uu: h(tt, xx, uu, measure.marks), x, ucheck)
        hn = np.sqrt(np.sum(hv**2 * measure.weights, axis=1))
        _record(report, "h_growth", hn / (1 + nx), C_h, [t, x, ucheck])
    return report
