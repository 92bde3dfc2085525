import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from logbsde.control import (ControlProblem, build_hstar_generator, constant_scan, default_challengers,
                             evaluate_policy, extract_feedback_policy, girsanov_density, hamiltonian1, hamiltonian2,
                             hstar_constants, hstar_h3_certificate, maximize_hamiltonians, verify_optimality)
from logbsde.engine import solve_lipschitz
from logbsde.errors import ConfigError, SimulationError, SingularMatrixError
from logbsde.forward import CoefficientSet, ConstantPolicy, simulate_uncontrolled
from logbsde.generators import ball_cloud, check_H3, log_growth_gap
from logbsde.kernel import TimeGrid, sample_bundle
from logbsde.registry import (bang_bang_problem, constant_gamma, constant_sigma, control_drift, control_tilt,
                              degenerate_problem, jump_control_problem, problem, single_mark, terminal)


def quadratic_problem(target=0.3, n_grid=101, extra=None):
    """H1 = z u - (u - target)^2 (+ extra(x)) on a uniform grid of [-1, 1]."""
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1), C_phi=1.0)

    def c(t, x, u):
        out = -(u[:, 0] - target) ** 2
        return out if extra is None else out + extra(x)

    return ControlProblem(co, terminal("state"), np.linspace(-1, 1, n_grid), np.zeros(1), c=c)


# -- Hamiltonians ------------------------------------------------------------------------


def test_hamiltonian_examples():
    bb = bang_bang_problem()
    assert hamiltonian1(bb, 0.0, [[0.0]], [[2.0]], [[0.5]])[0] == 1.0
    jc = jump_control_problem()
    assert hamiltonian2(jc, 0.0, [[0.0]], [[2.0]], [[0.5]])[0] == 1.0
    assert hamiltonian2(bb, 0.0, [[0.0]], None, [[0.0]])[0] == 0.0


def test_maximizers_follow_sign_and_tie_rule():
    bb = bang_bang_problem()
    h, ub, _ = maximize_hamiltonians(bb, 0.0, np.zeros((3, 1)), np.array([[2.0], [-1.0], [0.0]]))
    assert ub[:, 0].tolist() == [1.0, -1.0, -1.0]  # zero gradient: the first grid point
    assert h.tolist() == [2.0, 1.0, 0.0]
    jc = jump_control_problem()
    _, _, uc = maximize_hamiltonians(jc, 0.0, np.zeros((3, 1)), np.zeros((3, 1)), np.array([[1.0], [-1.0], [0.0]]))
    assert uc[:, 0].tolist() == [0.5, 0.0, 0.0]


def test_quadratic_matches_independent_scan():
    pb = quadratic_problem()
    zs = np.linspace(-3, 3, 61)
    h, ub, _ = maximize_hamiltonians(pb, 0.0, np.zeros((61, 1)), zs[:, None])
    grid = np.linspace(-1, 1, 101)
    for k, z in enumerate(zs):
        vals = [z * u - (u - 0.3) ** 2 for u in grid]
        best = max(range(101), key=lambda j: (vals[j], -j))
        assert ub[k, 0] == grid[best]
        assert h[k] == pytest.approx(vals[best], abs=1e-14)
        # and the grid maximizer sits next to the clipped continuous one
        assert abs(ub[k, 0] - np.clip(0.3 + z / 2, -1, 1)) <= 0.02 / 2 + 1e-12


@given(st.floats(-5, 5), st.floats(-2, 2))
def test_argmax_dominates_every_grid_point(z, x):
    pb = quadratic_problem(target=0.1)
    h, _, _ = maximize_hamiltonians(pb, 0.0, [[x]], [[z]])
    for u in pb.D1:
        assert h[0] >= hamiltonian1(pb, 0.0, [[x]], [[z]], [u])[0] - 1e-12


@given(st.floats(-5, 5), st.floats(-2, 2))
def test_control_independent_terms_do_not_move_the_argmax(z, x):
    base = quadratic_problem()
    shifted = quadratic_problem(extra=lambda xx: 3.0 * np.sin(xx[:, 0]))
    h0, u0, _, i0, _ = maximize_hamiltonians(base, 0.0, [[x]], [[z]], return_index=True)
    h1, u1, _, i1, _ = maximize_hamiltonians(shifted, 0.0, [[x]], [[z]], return_index=True)
    assert i0[0] == i1[0]
    assert h1[0] == pytest.approx(h0[0] + 3.0 * math.sin(x), abs=1e-12)


@given(st.permutations(list(range(5))), st.sampled_from([-1.0, 0.0, 1.0]))
def test_tie_rule_under_permutation(perm, z):
    grid = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])[list(perm)]
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1), C_phi=1.0)
    pb = ControlProblem(co, terminal("state"), grid, np.zeros(1))
    h, ub, _ = maximize_hamiltonians(pb, 0.0, [[0.0]], [[z]])
    assert h[0] == abs(z)
    vals = z * grid
    assert ub[0, 0] == grid[int(np.flatnonzero(vals == vals.max())[0])]


def test_singular_sigma_names_the_point():
    co = CoefficientSet(1, lambda t, x: np.where(x[:, :, None] > 1.0, 0.0, 1.0), phi=control_drift(1), C_phi=1.0)
    pb = ControlProblem(co, terminal("state"), np.linspace(-1, 1, 3), np.zeros(1))
    with pytest.raises(SingularMatrixError) as err:
        maximize_hamiltonians(pb, 0.25, np.array([[0.0], [2.0]]), np.ones((2, 1)))
    assert err.value.point == (0.25, [2.0])


def test_problem_validation():
    with pytest.raises(ConfigError):
        ControlProblem(CoefficientSet(1, constant_sigma(1)), terminal("state"), [], [0.0])
    with pytest.raises(ConfigError):
        ControlProblem(CoefficientSet(1, constant_sigma(1), g=control_tilt()), terminal("state"), [0.0], [0.0])
    with pytest.raises(ConfigError):
        problem("lqr")


# -- H* as a driver ------------------------------------------------------------------------


def test_hstar_vanishes_without_controls():
    pb = ControlProblem(CoefficientSet(1, constant_sigma(1)), terminal("state"), [0.0], [0.0])
    spec = build_hstar_generator(pb)
    y, z, nu = ball_cloud(spec, 10.0, 500, 0)
    assert np.all(spec.eval(0.0, y, z, nu, np.zeros((500, 1))) == 0.0)
    assert hstar_constants(pb).lipschitz == 0.0


@pytest.mark.parametrize("name", ["bang_bang", "jump_control", "degenerate"])
def test_hstar_sits_under_its_envelope(name):
    pb = problem(name)
    spec = build_hstar_generator(pb)
    y, z, nu = ball_cloud(spec, 20.0, 20_000, 3)
    state = np.random.default_rng(0).normal(0, 3, (20_000, 1))
    assert np.min(log_growth_gap(spec, 0.5, y, z, nu, state)) >= -1e-12


def test_hstar_constants_for_toys():
    assert hstar_constants(bang_bang_problem()).lipschitz == 1.0
    k = hstar_constants(jump_control_problem(rate=2.0, u_max=0.5))
    assert k.c1 == pytest.approx(0.5 * math.sqrt(2.0))
    assert k.lipschitz == pytest.approx(1.0)


@pytest.mark.parametrize("name", ["bang_bang", "jump_control", "degenerate"])
def test_hstar_monotonicity_certificate(name):
    pb = problem(name)
    spec = build_hstar_generator(pb)
    cert = hstar_h3_certificate(pb)
    assert cert.band_violations([3.0, 10.0, 1e3, 1e8]) == []
    for N in (3.0, 50.0, 1e4):
        assert check_H3(spec, None, cert, N, n_pairs=10_000, seed=int(N), state=np.zeros((10_000, 1))) == []


def test_hstar_certificate_needs_N_above_e():
    with pytest.raises(ConfigError):
        hstar_h3_certificate(bang_bang_problem(), N_min=2.5)


# -- Girsanov density --------------------------------------------------------------------


def test_density_is_one_for_the_zero_control(grid50, unit_mark):
    pb = degenerate_problem()
    b = sample_bundle(grid50, 1, 500, 0, unit_mark)
    s = simulate_uncontrolled(pb.coeffs, pb.x0, b)
    L = girsanov_density(pb, ConstantPolicy((0.0,), (0.0,)), s)
    assert np.array_equal(L.L, np.ones_like(L.L))


def test_brownian_shift_density(grid50):
    pb = bang_bang_problem()
    b = sample_bundle(grid50, 1, 100_000, 21)
    s = simulate_uncontrolled(pb.coeffs, pb.x0, b)
    W = girsanov_density(pb, ConstantPolicy((1.0,), (0.0,)), s)
    m, se, ok = W.normalization()
    assert ok
    # under the new measure x_T has mean T = 1
    v = W.terminal * s.terminal[:, 0]
    assert abs(v.mean() - 1.0) <= 4 * v.std() / math.sqrt(v.size)
    # exact closed form for a constant shift: L_T = exp(W_T - T/2)
    assert np.allclose(W.terminal, np.exp(s.terminal[:, 0] - 0.5), rtol=1e-12)


def test_poisson_tilt_density(grid50, unit_mark):
    pb = jump_control_problem(sigma=1.0)
    b = sample_bundle(grid50, 1, 100_000, 22, unit_mark)
    s = simulate_uncontrolled(pb.coeffs, pb.x0, b)
    W = girsanov_density(pb, ConstantPolicy((0.0,), (0.5,)), s)
    assert W.normalization()[2]
    counts = b.jump_counts.sum(axis=(1, 2))
    v = W.terminal * counts
    assert abs(v.mean() - 1.5) <= 4 * v.std() / math.sqrt(v.size)
    assert np.allclose(W.terminal, 1.5**counts * np.exp(-0.5), rtol=1e-12)


def test_density_rejects_tilt_at_minus_one(grid50, unit_mark):
    co = CoefficientSet(1, constant_sigma(1), constant_gamma(1), g=control_tilt(), alpha1=1.0, alpha2=1.0)
    pb = ControlProblem(co, terminal("state"), [0.0], [-1.0], measure=unit_mark)
    b = sample_bundle(grid50, 1, 10, 0, unit_mark)
    with pytest.raises(SimulationError):
        girsanov_density(pb, ConstantPolicy((0.0,), (-1.0,)), simulate_uncontrolled(co, [0.0], b))


# -- policy values --------------------------------------------------------------------------


def test_evaluate_policy_examples():
    grid = TimeGrid.uniform(2.0, 10)
    co = CoefficientSet(1, constant_sigma(1), phi=control_drift(1), C_phi=1.0)
    pb = ControlProblem(co, terminal("constant", value=0.0), [0.0, 1.0], [0.0], c=lambda t, x, u: np.ones(x.shape[0]))
    b = sample_bundle(grid, 1, 1000, 0)
    v = evaluate_policy(pb, ConstantPolicy((1.0,), (0.0,)), b)
    assert v.direct == pytest.approx(2.0, abs=1e-12) and v.direct_se == pytest.approx(0.0, abs=1e-12)
    seven = evaluate_policy(degenerate_problem(7.0), ConstantPolicy((0.5,), (0.25,)),
                            sample_bundle(grid, 1, 1000, 0, single_mark()))
    assert seven.direct == 7.0 and seven.reweighted == pytest.approx(7.0, rel=0.05) and seven.agree


def test_reweighted_and_direct_agree(grid50, unit_mark):
    pb = jump_control_problem()
    b = sample_bundle(grid50, 1, 100_000, 5, unit_mark)
    for pol in (ConstantPolicy((0.0,), (0.5,)), ConstantPolicy((0.0,), (0.2,))):
        v = evaluate_policy(pb, pol, b)
        assert v.agree
        assert abs(v.direct - pol.ucheck[0]) <= 4 * v.direct_se


def test_default_challengers_are_distinct_and_in_range():
    pb = jump_control_problem()
    ch = default_challengers(pb, n_random=20, seed=1)
    corners = [c for c in ch if c.name.startswith("corner")]
    assert len(corners) == 2  # D1 has a single point
    assert len(ch) == 22
    assert all(0.0 <= c.ucheck[0] <= 0.5 for c in ch)


# -- verification ----------------------------------------------------------------------------


def test_feedback_policy_for_bang_bang_picks_full_drift(tmp_path):
    pb = bang_bang_problem()
    grid = TimeGrid.uniform(1.0, 20)
    b = sample_bundle(grid, 1, 20_000, 3)
    s = simulate_uncontrolled(pb.coeffs, pb.x0, b)
    sol = solve_lipschitz(build_hstar_generator(pb), pb.xi(s.terminal), s)
    pol = extract_feedback_policy(pb, sol, n_bins=10)
    assert all(np.all(pb.D1[ix][:, 0] == 1.0) for ix in pol.idx1)
    path = tmp_path / "policy.csv"
    pol.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t,x_lo,x_hi,ubar_0,ucheck_0"
    # step 0 has a deterministic state: the quantile edges collapse to one, giving two cells
    assert sum(1 for ln in lines[1:] if ln.startswith("0,")) == 2
    with pytest.raises(ConfigError):
        pol.controls(0, 0.5, np.zeros((1, 1)))


def test_degenerate_problem_verifies():
    rep = verify_optimality(degenerate_problem(3.0), TimeGrid.uniform(1.0, 10), 2000, seed=4)
    assert rep.y0 == pytest.approx(3.0, abs=1e-12)
    assert rep.verdict == "pass"


def test_bang_bang_verifies():
    rep = verify_optimality(bang_bang_problem(), TimeGrid.uniform(1.0, 20), 20_000, seed=6)
    assert abs(rep.y0 - 1.0) <= rep.solver_tolerance
    assert rep.verdict == "pass", rep.table()
    assert "verdict: pass" in rep.table()


def test_constant_scan_orders_jump_tilts(grid50, unit_mark):
    pb = jump_control_problem(n_grid=6)
    b = sample_bundle(TimeGrid.uniform(1.0, 20), 1, 50_000, 8, unit_mark)
    vals = constant_scan(pb, b)
    assert len(vals) == 6
    best = max(vals, key=lambda v: v.direct)
    assert best.policy == "const[[0.0],[0.5]]"
    for v, u in zip(vals, np.linspace(0, 0.5, 6)):
        assert abs(v.direct - u) <= 4 * v.direct_se
