import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logbsde.errors import ConfigError, SimulationError
from logbsde.forward import (CoefficientSet, ConstantPolicy, FunctionPolicy, check_coefficient_conditions,
                             simulate_controlled, simulate_uncontrolled, tilted_counts)
from logbsde.kernel import MarkMeasure, TimeGrid, sample_bundle
from logbsde.registry import constant_gamma, constant_sigma, constant_tilt, control_drift, single_mark


def zero_sigma(t, x):
    return np.zeros((x.shape[0], x.shape[1], x.shape[1]))


def test_rejects_nonpositive_constants():
    with pytest.raises(ConfigError):
        CoefficientSet(1, constant_sigma(1), C_sigma=0.0)
    with pytest.raises(ConfigError):
        CoefficientSet(1, constant_sigma(1), C_phi=-1.0)


def test_no_noise_stays_put():
    b = sample_bundle(TimeGrid.uniform(1.0, 10), 2, 50, 0, single_mark())
    co = CoefficientSet(2, zero_sigma, lambda t, x, m: np.zeros((x.shape[0], m.shape[0], 2)))
    s = simulate_uncontrolled(co, [1.5, -2.0], b)
    assert np.all(s.x == np.array([1.5, -2.0]))


def test_brownian_paths_are_partial_sums(brownian_states):
    x = brownian_states.x[:, :, 0]
    dW = brownian_states.bundle.dW[:, :, 0]
    assert np.allclose(x[:, 1:], np.cumsum(dW, axis=1), rtol=0, atol=1e-12)
    assert x[:, -1].var() == pytest.approx(1.0, rel=0.03)


def test_compensated_poisson_terminal_mean(jump_states):
    xT = jump_states.terminal[:, 0]
    assert abs(xT.mean()) <= 4 * xT.std() / math.sqrt(xT.size)


def test_dimension_mismatch_rejected():
    b = sample_bundle(TimeGrid.uniform(1.0, 2), 2, 10, 0)
    with pytest.raises(ConfigError):
        simulate_uncontrolled(CoefficientSet(1, constant_sigma(1)), [0.0], b)
    b1 = sample_bundle(TimeGrid.uniform(1.0, 2), 1, 10, 0)
    with pytest.raises(ConfigError):
        simulate_uncontrolled(CoefficientSet(1, constant_sigma(1)), [0.0, 1.0], b1)
    with pytest.raises(ConfigError):
        simulate_uncontrolled(CoefficientSet(1, constant_sigma(1), constant_gamma(1)), [0.0], b1)


def test_non_finite_state_names_path_and_step():
    b = sample_bundle(TimeGrid.uniform(1.0, 5), 1, 10, 0)

    def blowup(t, x):
        out = np.ones((x.shape[0], 1, 1))
        if t > 0.5:
            out[3] = np.inf
        return out

    with pytest.raises(SimulationError) as err:
        simulate_uncontrolled(CoefficientSet(1, blowup), [0.0], b)
    assert err.value.path == 3 and err.value.step == 4


# -- controlled dynamics -----------------------------------------------------------


def test_zero_control_is_bit_identical(grid50, unit_mark):
    b = sample_bundle(grid50, 1, 5000, 3, unit_mark)
    base = CoefficientSet(1, constant_sigma(1), constant_gamma(1))
    ctrl = CoefficientSet(1, constant_sigma(1), constant_gamma(1), phi=lambda t, x, u: np.zeros_like(x),
                          g=constant_tilt(0.0))
    a = simulate_uncontrolled(base, [0.3], b)
    c = simulate_controlled(ctrl, ConstantPolicy(), [0.3], b)
    assert np.array_equal(a.x, c.x)


def test_constant_drift_mean(grid50):
    b = sample_bundle(grid50, 1, 100_000, 5)
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1))
    xT = simulate_controlled(co, ConstantPolicy((1.0,)), [0.0], b).terminal[:, 0]
    assert abs(xT.mean() - 1.0) <= 4 * xT.std() / math.sqrt(xT.size)


def test_tilted_jump_mean(grid50, unit_mark):
    # intensity (1 + g) lambda with compensator lambda: mean of x_T is g lambda T
    b = sample_bundle(grid50, 1, 100_000, 6, unit_mark)
    co = CoefficientSet(1, constant_sigma(1), constant_gamma(1), g=constant_tilt(0.5))
    xT = simulate_controlled(co, ConstantPolicy(), [0.0], b).terminal[:, 0]
    assert abs(xT.mean() - 0.5) <= 4 * xT.std() / math.sqrt(xT.size)


def test_feedback_policy_sees_state(grid50):
    b = sample_bundle(grid50, 1, 2000, 5)
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1))
    pol = FunctionPolicy(lambda i, t, x: (np.where(x[:, :1] > 0, -1.0, 1.0), np.zeros((x.shape[0], 1))))
    xT = simulate_controlled(co, pol, [0.0], b).terminal[:, 0]
    free = simulate_uncontrolled(co, [0.0], b).terminal[:, 0]
    assert xT.var() < free.var()


def test_tilt_at_minus_one_rejected(grid50, unit_mark):
    b = sample_bundle(grid50, 1, 100, 0, unit_mark)
    co = CoefficientSet(1, constant_sigma(1), constant_gamma(1), g=constant_tilt(-1.0))
    with pytest.raises(SimulationError):
        simulate_controlled(co, ConstantPolicy(), [0.0], b)


@given(st.floats(-0.9, 3.0), st.integers(0, 5))
def test_tilted_counts_shape_and_sign(g, base):
    counts = np.full((4, 3), base, dtype=np.int64)
    u = np.linspace(0.05, 0.95, 12).reshape(4, 3)
    out = tilted_counts(counts, u, np.full((4, 3), g), np.full((4, 3), 0.1))
    assert out.shape == counts.shape and np.all(out >= 0)
    if g > 0:
        assert np.all(out >= counts)
    elif g < 0:
        assert np.all(out <= counts)
    else:
        assert np.array_equal(out, counts)


def test_moment_stability_under_path_doubling(grid50, unit_mark):
    co = CoefficientSet(1, lambda t, x: (1.0 + 0.2 * np.tanh(x))[:, :, None], lambda t, x, m: 0.5 * np.ones((x.shape[0], 1, 1)))
    vals = []
    for P in (20_000, 40_000):
        s = simulate_uncontrolled(co, [0.0], sample_bundle(grid50, 1, P, 8, unit_mark))
        vals.append(np.mean(s.running_sup()[:, -1] ** 2))
    assert np.all(np.isfinite(vals))
    assert abs(vals[1] / vals[0] - 1.0) < 0.10


# -- sampled coefficient conditions -----------------------------------------------------


def _cloud(S=500, seed=0, d=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 3, (S, d))
    return (np.round(rng.uniform(0, 1, S), 2), x, x + rng.normal(0, 1, (S, d)), rng.uniform(-1, 1, (S, 1)),
            rng.uniform(0, 1, (S, 1)))


def test_unit_sigma_passes():
    rep = check_coefficient_conditions(CoefficientSet(1, constant_sigma(1)), _cloud())
    assert rep.passed
    assert rep.entries["sigma_lipschitz"].worst == 0.0
    assert rep.entries["sigma_inverse"].worst == pytest.approx(1.0)


def test_drift_ratio_passes_with_unit_bound():
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1), C_phi=1.0, K1=1.0)
    rep = check_coefficient_conditions(co, _cloud())
    assert rep.entries["sigma_inv_phi"].passed
    assert rep.entries["sigma_inv_phi"].worst <= 1.0


def test_tilt_envelope_violation_flagged():
    m = MarkMeasure(np.array([[1.0]]), np.array([1.0]))
    co = CoefficientSet(1, constant_sigma(1), g=lambda t, x, u, marks: 2.0 * np.ones((x.shape[0], 1)) * np.abs(marks[:, 0]),
                        alpha1=1.0, alpha2=1.0)
    rep = check_coefficient_conditions(co, _cloud(), m)
    assert "g_envelope" in rep.flagged() and not rep.passed
    assert rep.entries["g_envelope"].worst == pytest.approx(2.0)


def test_singular_sigma_is_hard_violation():
    rep = check_coefficient_conditions(CoefficientSet(1, zero_sigma), _cloud(50))
    assert rep.hard_violations and rep.hard_violations[0]["condition"] == "sigma_invertible"
    assert not rep.passed


def test_declared_constant_too_small_is_flagged():
    co = CoefficientSet(1, lambda t, x: (2.0 + np.sin(x))[:, :, None], C_sigma=0.1)
    rep = check_coefficient_conditions(co, _cloud())
    assert "sigma_growth" in rep.flagged()
    assert rep.to_dict()["entries"]["sigma_growth"]["witness"] is not None
