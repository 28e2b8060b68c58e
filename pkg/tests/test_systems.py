import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from saltfim._numdiff import numeric_jacobian
from saltfim.exceptions import ValidationError
from saltfim.hybrid import evaluate_dynamics, simulate
from saltfim.systems import (
    BuckParams,
    buck_averaged_rhs,
    buck_dcm_spec,
    case_saltation,
    disk_images,
    fig3_case,
    wind_profile,
    wtg_spec,
)
from saltfim.systems.wtg import WtgModel, WtgParams, power_coefficient, wtg_equilibrium


def test_buck_dimensions_and_printed_reset():
    spec = buck_dcm_spec(BuckParams(reset="printed"))
    assert (len(spec.modes), spec.n_states, spec.n_params) == (3, 2, 3)
    tr = next(t for t in spec.transitions if (t.source, t.target) == ("q2", "q3"))
    np.testing.assert_allclose(tr.reset(np.array([0.0, 5.0]), np.array([1e-3, 1e-4, 0.1]), 0.0), [0.0, 0.005])


def test_buck_params_validation():
    with pytest.raises(ValidationError):
        BuckParams(L=-1.0)
    with pytest.raises(ValidationError):
        BuckParams(duties=(0.5, 0.5, 0.5))
    with pytest.raises(ValidationError):
        BuckParams(v_hi=4.0)


@given(st.floats(-5, 5), st.floats(-10, 10), st.floats(1e-4, 1e-2), st.floats(1e-5, 1e-3), st.floats(0.0, 1.0))
def test_buck_q2_passivity(i_l, v_c, L, C, r_l):
    spec = buck_dcm_spec(BuckParams(v_in=1e-9))
    th = np.array([L, C, r_l])
    x = np.array([i_l, v_c])
    f = evaluate_dynamics(spec, "q2", x, th, 0.0)
    dE = th[0] * x[0] * f[0] + th[1] * x[1] * f[1]
    assert dE <= 1e-12 * (1.0 + abs(th[0] * x[0] * f[0]) + abs(th[1] * x[1] * f[1]))


def test_buck_zero_current_event_above_lower_threshold():
    params = BuckParams()
    arc = simulate(buck_dcm_spec(params), params.theta, T=0.01)
    crossings = [e for e in arc.events if (e.source, e.target) == ("q2", "q3")]
    assert crossings
    assert all(e.pre_state[1] > params.v_lo for e in crossings)
    q23 = buck_dcm_spec(params).transitions[crossings[0].transition_index]
    assert crossings[0].guard_rate < 0 and q23.guard_direction.value == "falling"


def test_buck_averaged_field():
    th = np.array([1e-3, 1e-4, 0.1])
    x = np.array([0.7, 4.0])
    q1 = buck_dcm_spec().mode("q1").dynamics(x, th, 0.0)
    f, _, _ = buck_averaged_rhs(BuckParams(duties=(1.0 - 2e-12, 1e-12, 1e-12)))
    np.testing.assert_allclose(f(x, th, 0.0), q1, rtol=1e-9)
    f3, _, _ = buck_averaged_rhs(BuckParams(duties=(1e-12, 1e-12, 1.0 - 2e-12)))
    assert f3(np.array([1.0, 0.0]), th, 0.0)[0] == pytest.approx(0.0, abs=1e-6)
    third = 1.0 / 3.0
    params = BuckParams(duties=(third, third, 1.0 - 2 * third))
    f_eq, fx, fp = buck_averaged_rhs(params)
    assert f_eq(np.zeros(2), th, 0.0)[0] == pytest.approx(third * params.v_in / th[0])
    np.testing.assert_allclose(fx(x, th, 0.0), numeric_jacobian(lambda xx: f_eq(xx, th, 0.0), x), rtol=1e-6)
    np.testing.assert_allclose(fp(x, th, 0.0), numeric_jacobian(lambda pp: f_eq(x, pp, 0.0), th), rtol=1e-6)


def test_fig3_disk_images():
    case = fig3_case()
    disk, by_reset, by_salt = disk_images(case)
    np.testing.assert_allclose(case_saltation(case), [[1.0, 0.0], [1.3, -0.7]], atol=1e-12)
    np.testing.assert_allclose(by_reset[0], [0.026, 0.0])
    np.testing.assert_allclose(by_salt[0], [0.026, 0.0338], atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(disk, axis=1), case.radius)


def test_wtg_dimensions_and_resets():
    params = WtgParams()
    spec = wtg_spec(params)
    assert (spec.n_states, spec.n_params) == (8, 7)
    assert spec.param_names == ("M_r", "kappa", "k_p", "k_i", "T_beta", "M", "T_E")
    assert all(tr.identity_reset for tr in spec.transitions)
    x = spec.initial_state.copy()
    x[5] = params.z_star
    assert spec.transitions[0].guard(x, params.theta, 0.0) == 0.0


def test_wind_profile():
    gamma = wind_profile(12.0, 1.2)
    assert gamma(0.0) == 12.0
    assert gamma(0.005) == pytest.approx(13.2)
    assert gamma.period == pytest.approx(0.02)
    with pytest.raises(ValidationError):
        wind_profile(1.0, 2.0)


def test_power_coefficient_decreases_with_pitch():
    params = WtgParams()
    for beta in (1.0, 2.5, 4.0):
        cp, dcp = power_coefficient(params.zeta, beta)
        assert cp > 0 and dcp < 0
        h = 1e-6
        fd = (power_coefficient(params.zeta, beta + h)[0] - power_coefficient(params.zeta, beta - h)[0]) / (2 * h)
        assert dcp == pytest.approx(fd, rel=1e-6)


def test_wtg_residual_jacobian_matches_differences():
    params = WtgParams()
    model = WtgModel(params)
    eq = wtg_equilibrium(params)
    y = eq.algebraic * 1.01
    jac = model.residual_jacobian(eq.state, y, params.theta, 0.003)
    fd = numeric_jacobian(lambda yy: model.residual(eq.state, yy, params.theta, 0.003), y)
    np.testing.assert_allclose(jac, fd, atol=1e-7)


def test_wtg_equilibrium_is_stationary():
    params = WtgParams(s=0.0)
    eq = wtg_equilibrium(params)
    spec = wtg_spec(params)
    f = evaluate_dynamics(spec, "q1", eq.state, params.theta, 0.0)
    assert np.linalg.norm(f) < 1e-8


def test_wtg_guards_agree_without_crossings():
    params = WtgParams(z_star=2.0, p_star=5.0)
    a = simulate(wtg_spec(params, "rotor_speed"), params.theta, T=0.05)
    b = simulate(wtg_spec(params, "power"), params.theta, T=0.05)
    assert not a.events and not b.events
    np.testing.assert_array_equal(a.segments[0].states, b.segments[0].states)


def test_wtg_params_from_dict():
    p = WtgParams.from_dict({"pitch": {"k_p": 120.0}, "wind": {"r": 11.0}})
    assert p.k_p == 120.0 and p.r == 11.0
    with pytest.raises(ValidationError):
        WtgParams.from_dict({"bogus": 1.0})
    assert WtgParams.from_dict(WtgParams().to_dict()) == WtgParams()
