"""Drivers f(t, y, z, nu): evaluation, growth-assumption checks, mollification.

A driver is evaluated batched over P points:

    y: (P,)   z: (P, d)   nu: (P, K)   state: (P, d_x) or None   ->  (P,)

``state`` carries the omega-dependence of a random driver (the forward state
along the paths the solver is working on); deterministic drivers ignore it.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .kernel import MarkMeasure, TimeGrid

log = logging.getLogger(__name__)

# sup_{r >= 0} r (1 - sqrt|ln r|), attained at r = 1; gives a|z| <= a + a|z|sqrt|ln|z||
LINEAR_TO_LOG_SLACK = 1.0
# sup_{0 <= r <= 1} r sqrt|ln r| = e^{-1/2} / sqrt(2)
_ZLOG_MAX_UNIT = math.exp(-0.5) * math.sqrt(0.5)


def zlog(r):
    """r * sqrt(|ln r|), extended by continuity with the value 0 at r = 0."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r * np.sqrt(np.abs(np.log(r)))
    return np.where(r > 0, out, 0.0)


def zlog_sup(R: float) -> float:
    """max of zlog on [0, R]."""
    if R <= 1.0:
        return float(zlog(min(R, math.exp(-0.5)))) if R > 0 else 0.0
    return max(_ZLOG_MAX_UNIT, float(zlog(R)))


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver with declared growth-envelope constants and an optional Lipschitz certificate.

    ``active`` flags which of (y, z, nu) the driver actually depends on; the
    mollifier skips the inactive directions.
    """

    fn: Callable
    d: int
    K: int = 0
    measure: Optional[MarkMeasure] = None
    eta: Optional[Callable] = None
    c0: float = 0.0
    c1: float = 0.0
    lipschitz_certificate: Optional[float] = None
    eta_bound: Optional[float] = None
    active: tuple = (True, True, True)
    random: bool = False
    name: str = "generator"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0:
            raise ConfigError("c0 and c1 must be nonnegative", field="generator")
        if self.K and (self.measure is None or self.measure.n_marks != self.K):
            raise ConfigError("a mark measure with K marks is required", field="generator.measure")

    def eval(self, t, y, z, nu, state=None):
        y, z, nu = _points(y, z, nu, self.d, self.K)
        return np.asarray(self.fn(t, y, z, nu, state), dtype=float) * np.ones(y.shape[0])

    def eta_at(self, t, state=None, P: int = 1):
        if self.eta is None:
            return np.zeros(P)
        return np.broadcast_to(np.asarray(self.eta(t, state), dtype=float), (P,))

    def nu_norm(self, nu):
        if self.K == 0:
            return np.zeros(np.shape(nu)[0])
        return np.sqrt(np.sum(np.asarray(nu) ** 2 * self.measure.weights, axis=-1))

    def radius(self, y, z, nu):
        """max(|y|, |z|, ||nu||_lambda): the norm of the balls used for cutoffs and rho_N."""
        r = np.maximum(np.abs(y), np.linalg.norm(z, axis=1))
        return np.maximum(r, self.nu_norm(nu))


def _points(y, z, nu, d, K):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    P = y.shape[0]
    z = np.asarray(z, dtype=float).reshape(P, d)
    nu = np.zeros((P, K)) if nu is None else np.asarray(nu, dtype=float).reshape(P, K)
    return y, z, nu


# -- registry drivers -----------------------------------------------------------


def zero_generator(d: int = 1, measure: Optional[MarkMeasure] = None) -> GeneratorSpec:
    K = 0 if measure is None else measure.n_marks
    return GeneratorSpec(lambda t, y, z, nu, s: np.zeros(y.shape[0]), d, K, measure,
                         lipschitz_certificate=0.0, eta_bound=0.0, active=(False, False, False), name="zero")


def linear_generator(d: int = 1, measure: Optional[MarkMeasure] = None, a_y: float = 0.0,
                     a_z: float = 1.0, a_nu: float = 0.0, b: float = 0.0) -> GeneratorSpec:
    """f = a_y y + a_z sum(z) + a_nu sum(nu) + b.

    The declared envelope constants cover the z and nu parts; with a_y != 0 the
    driver is Lipschitz but outside the y-free growth envelope.
    """
    K = 0 if measure is None else measure.n_marks
    c0 = abs(a_z) * math.sqrt(d)
    c1 = abs(a_nu) * math.sqrt(float(np.sum(1.0 / measure.weights))) if K else 0.0
    eta0 = abs(b) + c0 * LINEAR_TO_LOG_SLACK
    lip = math.sqrt(a_y**2 + d * a_z**2 + K * a_nu**2)

    def fn(t, y, z, nu, s):
        out = a_y * y + a_z * np.sum(z, axis=1) + b
        if K:
            out = out + a_nu * np.sum(nu, axis=1)
        return out

    return GeneratorSpec(fn, d, K, measure, eta=lambda t, s: eta0, c0=c0, c1=c1, lipschitz_certificate=lip,
                         eta_bound=eta0, active=(a_y != 0.0, a_z != 0.0, a_nu != 0.0 and K > 0), name="linear",
                         params=dict(a_y=a_y, a_z=a_z, a_nu=a_nu, b=b))


def envelope_generator(d: int = 1, measure: Optional[MarkMeasure] = None, c0: float = 0.1,
                       c1: float = 0.1, eta: float = 0.1) -> GeneratorSpec:
    """f = eta + c0 |z| sqrt|ln|z|| + c1 ||nu||: sits exactly on its own growth envelope."""
    K = 0 if measure is None else measure.n_marks

    def fn(t, y, z, nu, s):
        out = eta + c0 * zlog(np.linalg.norm(z, axis=1))
        if K:
            out = out + c1 * np.sqrt(np.sum(nu**2 * measure.weights, axis=1))
        return out

    return GeneratorSpec(fn, d, K, measure, eta=lambda t, s: eta, c0=c0, c1=c1 if K else 0.0, eta_bound=abs(eta),
                         active=(False, c0 != 0.0, K > 0 and c1 != 0.0), name="log_growth_envelope",
                         params=dict(c0=c0, c1=c1, eta=eta))


# -- growth envelope, weight, usyz ------------------------------------------------


def log_growth_gap(spec: GeneratorSpec, t, y, z, nu, state=None, include_nu: bool = True):
    """|eta_t| + c0 |z| sqrt|ln|z|| + c1 ||nu|| - |f|; negative values falsify the envelope."""
    y, z, nu = _points(y, z, nu, spec.d, spec.K)
    env = np.abs(spec.eta_at(t, state, y.shape[0])) + spec.c0 * zlog(np.linalg.norm(z, axis=1))
    if include_nu:
        env = env + spec.c1 * spec.nu_norm(nu)
    return env - np.abs(spec.eval(t, y, z, nu, state))


@dataclass(frozen=True)
class ThetaWeight:
    A: float

    def __post_init__(self):
        if not self.A > 0:
            raise ConfigError("A must be strictly positive", field="A")


def theta(t, w: ThetaWeight):
    """ln(A t + 2) + 2."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("theta is defined for t >= 0")
    out = np.log(w.A * t + 2.0) + 2.0
    return float(out) if out.ndim == 0 else out


def usyz_gap(y, z, C2: float, C3: float):
    """|z|^2/2 + C3 ln|y| |y|^2 - C2 |y| |z| sqrt|ln|z||, for |y| > 1; z may be a vector or a norm."""
    y = np.abs(np.asarray(y, dtype=float))
    if np.any(y <= 1.0):
        raise DomainError("usyz_gap requires |y| > 1")
    z = np.asarray(z, dtype=float)
    zn = np.linalg.norm(z, axis=-1) if z.ndim > y.ndim else np.abs(z)
    out = 0.5 * zn**2 + C3 * np.log(y) * y**2 - C2 * y * zlog(zn)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class UsyzGrid:
    y_min: float = 2.0
    y_max: float = 1e4
    z_min: float = 1e-6
    z_max: float = 1e6
    n_y: int = 200
    n_z: int = 200

    def mesh(self):
        if not (1.0 < self.y_min < self.y_max and 0 < self.z_min < self.z_max and self.n_y >= 1 and self.n_z >= 1):
            raise ConfigError("invalid usyz grid", field="usyz_grid")
        y = np.geomspace(self.y_min, self.y_max, self.n_y)
        z = np.geomspace(self.z_min, self.z_max, self.n_z)
        return np.meshgrid(y, z, indexing="ij")


class CalibrationError(NumericalError):
    pass


def calibrate_usyz(C2: float, grid: UsyzGrid = UsyzGrid(), j_min: int = -30, j_max: int = 60) -> float:
    """Smallest C3 in {2^j : j_min <= j <= j_max} with usyz_gap >= 0 on the whole grid."""
    if not C2 > 0:
        raise ConfigError("C2 must be positive", field="C2")
    Y, Z = grid.mesh()
    need = np.max((C2 * Y * zlog(Z) - 0.5 * Z**2) / (np.log(Y) * Y**2))
    j = j_min if need <= 2.0**j_min else int(math.ceil(math.log2(need)))
    while j <= j_max:
        if np.min(usyz_gap(Y, Z, C2, 2.0**j)) >= 0:
            return 2.0**j
        j += 1
    raise CalibrationError(f"no C3 <= 2^{j_max} certifies the grid for C2={C2}")


# -- mollification ----------------------------------------------------------------


def _bump(s):
    s = np.asarray(s)
    return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 2, 0.0)


def _smoothstep_down(s):
    """C-infinity transition: 1 for s <= 0, 0 for s >= 1."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s < 1.0, np.exp(-1.0 / np.where(s < 1.0, 1.0 - s, 1.0)), 0.0)
        b = np.where(s > 0.0, np.exp(-1.0 / np.where(s > 0.0, s, 1.0)), 0.0)
    return a / (a + b)


def _smoothstep_dmax() -> float:
    s = np.linspace(1e-6, 1 - 1e-6, 200001)
    v = _smoothstep_down(s)
    return float(np.max(np.abs(np.diff(v)) / np.diff(s))) * 1.01


_PSI_DMAX = _smoothstep_dmax()


def q_of(n: int, alpha_exp: float = 1.0) -> int:
    return int(n + math.ceil(n**alpha_exp))


def _sup_abs_bound(spec: GeneratorSpec, R: float, slack: float) -> Optional[float]:
    """Upper bound for |f| on {max(|y|,|z|,||nu||) <= R + slack} from declared data."""
    Rz = R + slack * math.sqrt(max(spec.d, 1))
    Rn = R + slack * (math.sqrt(spec.measure.total_rate) if spec.K else 0.0)
    if not spec.active[0] and spec.eta_bound is not None:
        return spec.eta_bound + spec.c0 * zlog_sup(Rz) + spec.c1 * Rn
    if spec.lipschitz_certificate is not None and not spec.random:
        # |f(t, 0)| is taken at t = 0: registry drivers with a certificate are time-homogeneous
        f0 = abs(float(spec.eval(0.0, [0.0], np.zeros((1, spec.d)), np.zeros((1, spec.K)))[0]))
        inv_min = 1.0 / math.sqrt(float(np.min(spec.measure.weights))) if spec.K else 0.0
        R_euclid = math.sqrt((R + slack) ** 2 + Rz**2 + (Rn * inv_min) ** 2)
        return f0 + spec.lipschitz_certificate * R_euclid
    return None


def mollify(spec: GeneratorSpec, n: int, alpha_exp: float = 1.0, refine: int = 3, order: int = 3) -> GeneratorSpec:
    """Bounded Lipschitz approximation f_n = psi_n * (bump average of the lattice interpolant of f).

    f is first replaced by its multilinear interpolant on a lattice of spacing
    h = 1/(refine q) in the active coordinates (fixed in absolute coordinates),
    which is Lipschitz even when f is not. That interpolant is averaged over
    translates by the bump kernel (1 - s^2)^2 of radius 1/q, discretized with an
    ``order``-point Gauss-Legendre rule per axis. Both steps are convex
    combinations, so a Lipschitz f keeps its constant along each axis. psi_n is
    1 where max(|y|, |z|, ||nu||) <= n and 0 beyond n + 1.
    """
    if n < 1:
        raise ConfigError("n must be >= 1", field="n")
    if refine < 1 or order < 1:
        raise ConfigError("refine and order must be >= 1", field="refine")
    q = q_of(n, alpha_exp)
    h = 1.0 / (refine * q)
    gl_nodes, gl_weights = np.polynomial.legendre.leggauss(order)
    kappa = gl_weights * _bump(gl_nodes)
    kappa = kappa / np.sum(kappa)
    shifts = gl_nodes / q
    d, K = spec.d, spec.K
    axes = []
    if spec.active[0]:
        axes.append(("y", 0))
    if spec.active[1]:
        axes += [("z", j) for j in range(d)]
    if spec.active[2]:
        axes += [("nu", k) for k in range(K)]
    D = len(axes)

    def fn(t, y, z, nu, state):
        P = y.shape[0]
        r = spec.radius(y, z, nu)
        psi = _smoothstep_down(r - n)
        if D == 0:
            return psi * spec.fn(t, y, z, nu, state)
        acc = np.zeros(P)
        live = np.nonzero(psi > 0)[0]
        if live.size == 0:
            return acc
        y, z, nu = y[live], z[live], nu[live]
        st = None if state is None else state[live]
        coords = []
        for kind, j in axes:
            coords.append(y if kind == "y" else (z[:, j] if kind == "z" else nu[:, j]))
        coords = np.stack(coords, axis=1)  # (L, D)
        sub = np.zeros(live.size)
        yy, zz, nn = y.copy(), z.copy(), nu.copy()
        for shift in itertools.product(range(order), repeat=D):
            ks = float(np.prod(kappa[list(shift)]))
            v = (coords - shifts[list(shift)][None, :]) / h
            base = np.floor(v)
            frac = v - base
            for corner in itertools.product((0, 1), repeat=D):
                c = np.array(corner)
                weight = np.prod(np.where(c[None, :] == 1, frac, 1.0 - frac), axis=1)
                nodes = (base + c[None, :]) * h
                for a, (kind, j) in enumerate(axes):
                    if kind == "y":
                        yy = nodes[:, a]
                    elif kind == "z":
                        zz[:, j] = nodes[:, a]
                    else:
                        nn[:, j] = nodes[:, a]
                vals = np.asarray(spec.fn(t, yy, zz, nn, st), dtype=float)
                sub += ks * weight * vals
        acc[live] = psi[live] * sub
        return acc

    # certificate: the interpolant's partial derivatives are convex combinations of
    # lattice divided differences, each bounded by min(L, osc / h); averaging keeps that.
    lip_r = max(1.0, math.sqrt(float(np.max(spec.measure.weights))) if K else 1.0)
    sup_f = _sup_abs_bound(spec, n + 1.0, 1.0 / q + h)
    cert = None
    if sup_f is not None:
        if D == 0:
            cert = _PSI_DMAX * lip_r * sup_f + (spec.lipschitz_certificate or 0.0)
        else:
            per_axis = 2.0 * sup_f / h
            if spec.lipschitz_certificate is not None:
                per_axis = min(per_axis, spec.lipschitz_certificate)
            cert = _PSI_DMAX * lip_r * sup_f + math.sqrt(D) * per_axis
    if cert is None:
        log.warning("no Lipschitz certificate derivable for mollified %s (n=%d)", spec.name, n)
    return replace(spec, fn=fn, lipschitz_certificate=cert, name=f"{spec.name}@n={n}",
                   params={**spec.params, "n": n, "q": q, "refine": refine, "order": order})


def ball_cloud(spec: GeneratorSpec, N: float, count: int, seed: int):
    """Points with |y|, |z|, ||nu||_lambda <= N: the origin followed by uniform draws per ball."""
    rng = np.random.default_rng([seed, 0x5A17])
    y = rng.uniform(-N, N, count)
    z = _unit_ball(rng, count, spec.d) * N
    nu = _unit_ball(rng, count, spec.K) * N
    if spec.K:
        nu = nu / np.sqrt(spec.measure.weights)
    y[0] = 0.0
    z[0] = 0.0
    nu[0] = 0.0
    return y, z, nu


def _unit_ball(rng, count, dim):
    if dim == 0:
        return np.zeros((count, 0))
    g = rng.standard_normal((count, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    return g * rng.random((count, 1)) ** (1.0 / dim)


def rho_N(f: GeneratorSpec, g: GeneratorSpec, N: float, grid: TimeGrid, count: int = 4096, seed: int = 0,
          cloud=None, states=None, n_state_paths: int = 16) -> float:
    """Sampled estimate of E[int_0^T sup_{ball N} |f - g| ds] (left-point rule in time).

    ``cloud`` may be a superset (y, z, nu); only its points inside the ball are used.
    ``states`` (StatePaths) supplies the omega-dependence of random drivers; the
    expectation is then averaged over the first ``n_state_paths`` paths.
    """
    if count < 1:
        raise ConfigError("count must be >= 1", field="count")
    if cloud is None:
        y, z, nu = ball_cloud(f, N, count, seed)
    else:
        y, z, nu = _points(*cloud, f.d, f.K)
        keep = f.radius(y, z, nu) <= N
        y, z, nu = y[keep], z[keep], nu[keep]
        if y.size == 0:
            return 0.0
    times, dt = grid.times[:-1], grid.dt
    if states is None:
        total = 0.0
        for t, h in zip(times, dt):
            diff = np.abs(f.eval(t, y, z, nu) - g.eval(t, y, z, nu))
            total += float(np.max(diff)) * h
        return total
    n_s = min(n_state_paths, states.x.shape[0])
    acc = 0.0
    for p in range(n_s):
        for i, (t, h) in enumerate(zip(times, dt)):
            st = np.repeat(states.x[p:p + 1, i, :], y.shape[0], axis=0)
            diff = np.abs(f.eval(t, y, z, nu, st) - g.eval(t, y, z, nu, st))
            acc += float(np.max(diff)) * h
    return acc / n_s


def sampled_lipschitz(spec: GeneratorSpec, radius: float, n_pairs: int = 4096, seed: int = 0, t: float = 0.0,
                      state=None) -> float:
    """Largest sampled difference quotient |f(u) - f(u')| / |u - u'| (Euclidean in (y, z, nu))."""
    rng = np.random.default_rng([seed, 0x11B])
    y, z, nu = ball_cloud(spec, radius, n_pairs, seed)
    scale = 10.0 ** rng.uniform(-4, 0, (n_pairs, 1))
    dim = 1 + spec.d + spec.K
    step = rng.standard_normal((n_pairs, dim)) * scale
    y2 = y + step[:, 0]
    z2 = z + step[:, 1:1 + spec.d]
    nu2 = nu + step[:, 1 + spec.d:]
    dist = np.linalg.norm(step, axis=1)
    st = None if state is None else np.broadcast_to(state, (n_pairs,) + np.shape(state)[-1:])
    diff = np.abs(spec.eval(t, y, z, nu, st) - spec.eval(t, y2, z2, nu2, st))
    return float(np.max(diff / dist))


# -- assumption checkers ----------------------------------------------------------


@dataclass
class HolderReport:
    alpha_bar: float
    c: float
    finite: bool
    witness: Optional[dict] = None

    def to_dict(self):
        return {"alpha_bar": self.alpha_bar, "c": self.c, "finite": self.finite, "witness": self.witness}


def holder_power_bound(spec: GeneratorSpec, alpha_bar: float, samples=None, t: float = 0.0, N: float = 10.0,
                       count: int = 4096, seed: int = 0, cap: float = 1e12, state=None) -> HolderReport:
    """Smallest sampled c with |f|^(2/alpha_bar) <= c (1 + eta^2 + |z|^2 + ||nu||^2)."""
    if not 1.0 < alpha_bar < 2.0:
        raise DomainError("alpha_bar must lie in (1, 2)")
    if samples is None:
        y, z, nu = ball_cloud(spec, N, count, seed)
    else:
        y, z, nu = _points(*samples, spec.d, spec.K)
    P = y.shape[0]
    f = np.abs(spec.eval(t, y, z, nu, state))
    eta = spec.eta_at(t, state, P)
    denom = 1.0 + eta**2 + np.sum(z**2, axis=1) + spec.nu_norm(nu) ** 2
    ratio = f ** (2.0 / alpha_bar) / denom
    j = int(np.argmax(ratio))
    c = float(ratio[j])
    return HolderReport(alpha_bar, c, bool(np.isfinite(c) and c <= cap),
                        {"y": float(y[j]), "z": z[j].tolist(), "nu": nu[j].tolist()})


@dataclass
class MomentReport:
    exponent: float
    moment: float
    finite: bool

    def to_dict(self):
        return {"exponent": self.exponent, "moment": self.moment, "finite": self.finite}


def check_H1(terminal_samples, w: ThetaWeight, T: float) -> MomentReport:
    """Sample mean of |xi|^(ln(A T + 2) + 2)."""
    xi = np.asarray(terminal_samples, dtype=float).reshape(-1)
    if xi.size == 0:
        raise ConfigError("terminal sample is empty", field="xi")
    p = theta(T, w)
    m = float(np.mean(np.abs(xi) ** p))
    return MomentReport(p, m, bool(np.isfinite(m)))


@dataclass(frozen=True)
class H3Certificate:
    M: float
    A_N: Callable
    r: float
    v1: Callable = lambda t, state=None: 0.0
    v2: Callable = lambda t, state=None: None
    q1: float = 2.0
    q2: float = 2.0

    def __post_init__(self):
        if not self.M >= 0:
            raise ConfigError("M must be nonnegative", field="M")
        if not self.r > 0:
            raise ConfigError("r must be positive", field="r")

    def band_violations(self, Ns):
        """Sampled N > 2 where 1 < A_N <= (ln N)^r or monotone growth fails."""
        Ns = np.sort(np.asarray(Ns, dtype=float))
        out = []
        prev = -np.inf
        for N in Ns:
            if N <= 2:
                continue
            a = float(self.A_N(N))
            if not (1.0 < a <= math.log(N) ** self.r * (1 + 1e-12)):
                out.append({"N": float(N), "A_N": a, "reason": "outside (1, (ln N)^r]"})
            if a < prev:
                out.append({"N": float(N), "A_N": a, "reason": "not increasing"})
            prev = a
        return out


def check_H3(spec: GeneratorSpec, spec2: Optional[GeneratorSpec], cert: H3Certificate, N: float, pairs=None,
             n_pairs: int = 10000, seed: int = 0, t: float = 0.0, state=None, tol: float = 1e-12) -> list:
    """Sampled monotonicity inequality on pairs with all norms bounded by ln N; returns the violations."""
    if N <= 2:
        raise DomainError("the monotonicity inequality is stated for N > 2")
    spec2 = spec if spec2 is None else spec2
    lnN = math.log(N)
    if pairs is None:
        y, z, nu = ball_cloud(spec, lnN, n_pairs, seed)
        y2, z2, nu2 = ball_cloud(spec, lnN, n_pairs, seed + 1)
    else:
        (y, z, nu), (y2, z2, nu2) = pairs
        y, z, nu = _points(y, z, nu, spec.d, spec.K)
        y2, z2, nu2 = _points(y2, z2, nu2, spec.d, spec.K)
    P = y.shape[0]
    v1 = np.broadcast_to(np.abs(np.asarray(cert.v1(t, state), dtype=float)), (P,))
    v2 = cert.v2(t, state)
    v2n = np.zeros(P) if v2 is None else np.broadcast_to(spec.nu_norm(np.atleast_2d(v2)), (P,))
    ind = (v1 + v2n) <= lnN
    yb, zb, nb = y - y2, np.linalg.norm(z - z2, axis=1), spec.nu_norm(nu - nu2)
    lhs = yb * (spec.eval(t, y, z, nu, state) - spec2.eval(t, y2, z2, nu2, state)) * ind
    lA = math.log(cert.A_N(N))
    rhs = cert.M * (yb**2 * lA + np.abs(yb) * zb * math.sqrt(lA) + np.abs(yb) * nb * math.sqrt(lA))
    bad = np.nonzero(lhs > rhs + tol * (1 + np.abs(rhs)))[0]
    return [
        {"y": float(y[j]), "z": z[j].tolist(), "nu": nu[j].tolist(), "y2": float(y2[j]), "z2": z2[j].tolist(),
         "nu2": nu2[j].tolist(), "lhs": float(lhs[j]), "rhs": float(rhs[j])}
        for j in bad
    ]
