"""Named building blocks that configuration files refer to.

Every builder takes keyword parameters and returns a ready object.  Unknown
names raise :class:`ConfigError` listing the known ones.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .control import ControlProblem
from .errors import ConfigError
from .forward import CoefficientSet
from .generators import envelope_generator, linear_generator, zero_generator
from .kernel import MarkMeasure


def single_mark(rate: float = 1.0, mark: float = 1.0) -> MarkMeasure:
    return MarkMeasure(np.array([[float(mark)]]), np.array([float(rate)]))


def mark_measure(marks=None, weights=None, rate: float = 1.0, mark: float = 1.0) -> MarkMeasure:
    if marks is None:
        return single_mark(rate, mark)
    return MarkMeasure(np.asarray(marks, dtype=float).reshape(len(weights), -1), np.asarray(weights, dtype=float))


# -- forward coefficients -------------------------------------------------------------


def constant_sigma(d: int, scale: float = 1.0):
    eye = float(scale) * np.eye(d)
    return lambda t, x: np.broadcast_to(eye, (x.shape[0], d, d))


def constant_gamma(d: int, scale: float = 1.0):
    return lambda t, x, marks: np.broadcast_to(float(scale), (x.shape[0], marks.shape[0], d))


def control_drift(d: int):
    """phi(t, x, ubar) = ubar (the control is the drift)."""
    return lambda t, x, ubar: np.broadcast_to(np.asarray(ubar, dtype=float), (x.shape[0], d))


def control_tilt():
    """g(t, x, ucheck, w) = ucheck_0 for every mark."""
    return lambda t, x, ucheck, marks: np.broadcast_to(np.asarray(ucheck, dtype=float)[..., :1],
                                                       (x.shape[0], 1)) * np.ones((1, marks.shape[0]))


def constant_tilt(value: float):
    return lambda t, x, ucheck, marks: np.full((x.shape[0], marks.shape[0]), float(value))


def coefficients(d: int = 1, sigma: float = 1.0, gamma: Optional[float] = None, drift: Optional[str] = None,
                 drift_value: float = 1.0, tilt: Optional[str] = None, tilt_value: float = 0.0) -> CoefficientSet:
    """Constant-diffusion coefficients with optional drift/tilt (``"control"`` or ``"constant"``)."""
    phi = None
    C_phi = None
    if drift == "control":
        phi = control_drift(d)
    elif drift == "constant":
        phi = lambda t, x, ubar: np.full((x.shape[0], d), float(drift_value))
        C_phi = abs(drift_value) * np.sqrt(d) / abs(sigma) if drift_value else None
    elif drift is not None:
        raise ConfigError(f"unknown drift {drift!r}; known: control, constant", field="coefficients.drift")
    g = None
    if tilt == "control":
        g = control_tilt()
    elif tilt == "constant":
        g = constant_tilt(tilt_value)
    elif tilt is not None:
        raise ConfigError(f"unknown tilt {tilt!r}; known: control, constant", field="coefficients.tilt")
    if sigma == 0:
        sig = lambda t, x: np.zeros((x.shape[0], d, d))
    else:
        sig = constant_sigma(d, sigma)
    return CoefficientSet(d, sig, None if gamma is None else constant_gamma(d, gamma), phi, g,
                          C_inv=1.0 / abs(sigma) if sigma else 1.0, C_phi=C_phi)


# -- terminals and drivers -------------------------------------------------------------


TERMINALS = {
    "state": lambda scale=1.0, shift=0.0: (lambda xT: float(scale) * xT[:, 0] + float(shift)),
    "constant": lambda value=1.0: (lambda xT: np.full(xT.shape[0], float(value))),
    "state_sum": lambda scale=1.0: (lambda xT: float(scale) * np.sum(xT, axis=1)),
}


def terminal(name: str, **params):
    if name not in TERMINALS:
        raise ConfigError(f"unknown terminal {name!r}; known: {', '.join(sorted(TERMINALS))}", field="terminal")
    return TERMINALS[name](**params)


GENERATORS = {
    "zero": zero_generator,
    "linear": linear_generator,
    "log_growth_envelope": envelope_generator,
}


def generator(name: str, d: int = 1, measure: Optional[MarkMeasure] = None, **params):
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; known: {', '.join(sorted(GENERATORS))}", field="generator")
    return GENERATORS[name](d=d, measure=measure, **params)


# -- control problems ------------------------------------------------------------------


def bang_bang_problem(x0: float = 0.0, n_grid: int = 21) -> ControlProblem:
    """d = 1, sigma = 1, phi = ubar on a grid of [-1, 1], no rewards, xi = x_T; optimum ubar = 1, J = x0 + T."""
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1), C_phi=1.0, K1=1.0)
    return ControlProblem(co, terminal("state"), np.linspace(-1.0, 1.0, n_grid), np.zeros(1), x0=(float(x0),),
                          name="bang_bang")


def jump_control_problem(x0: float = 0.0, sigma: float = 1.0, rate: float = 1.0, n_grid: int = 11,
                         u_max: float = 0.5) -> ControlProblem:
    """gamma = 1 on one mark, g = ucheck in [0, u_max], xi = x_T; optimum ucheck = u_max, J = x0 + u_max rate T."""
    m = single_mark(rate)
    co = CoefficientSet(1, constant_sigma(1, sigma), constant_gamma(1), g=control_tilt(), C_inv=1.0 / sigma,
                        alpha1=u_max, alpha2=u_max)
    return ControlProblem(co, terminal("state"), np.zeros(1), np.linspace(0.0, u_max, n_grid), x0=(float(x0),),
                          measure=m, name="jump_control")


def degenerate_problem(value: float = 3.0, x0: float = 0.0) -> ControlProblem:
    """Constant payoff with both controls active: every policy is worth ``value``."""
    m = single_mark(1.0)
    co = CoefficientSet(1, constant_sigma(1), constant_gamma(1), phi=control_drift(1), g=control_tilt(), C_phi=1.0,
                        alpha1=0.5, alpha2=0.5)
    return ControlProblem(co, terminal("constant", value=value), np.linspace(-1, 1, 5), np.linspace(-0.5, 0.5, 5),
                          x0=(float(x0),), measure=m, name="degenerate")


PROBLEMS = {
    "bang_bang": bang_bang_problem,
    "jump_control": jump_control_problem,
    "degenerate": degenerate_problem,
}


def problem(name: str, **params) -> ControlProblem:
    if name not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; known: {', '.join(sorted(PROBLEMS))}", field="problem")
    return PROBLEMS[name](**params)
