"""Randomized checks of structural identities."""

import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saltfim.information import (
    NoiseModel,
    conditional_fim,
    crlb,
    event_increment,
    flow_information,
    info_metrics,
    trapezoid_weights,
)
from saltfim.sensitivity import JacobianBundle, event_time_sensitivity, saltation_matrix, sensitivity_jump

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(float, n, elements=finite)


def mat(r, c):
    return arrays(float, (r, c), elements=finite)


def spd(n):
    return mat(n, n).map(lambda A: A @ A.T + 0.5 * np.eye(n))


def make_bundle(gx, Rx, gt=0.0, gp=None, Rp=None, Rt=None):
    n = gx.size
    p = 2
    return JacobianBundle(np.zeros((n, n)), np.zeros((n, p)), gx, np.zeros(p) if gp is None else gp, gt, Rx,
                          np.zeros((n, p)) if Rp is None else Rp, np.zeros(n) if Rt is None else Rt)


@given(vec(3), vec(3))
def test_saltation_is_identity_for_continuous_identity_events(gx, f):
    assume(abs(gx @ f) > 1e-3)
    Xi = saltation_matrix(make_bundle(gx, np.eye(3)), f, f)
    np.testing.assert_allclose(Xi, np.eye(3), atol=1e-12)


@given(vec(3), vec(3), vec(3), mat(3, 3))
def test_saltation_maps_incoming_to_outgoing_field(gx, f_minus, f_plus, Rx):
    assume(abs(gx @ f_minus) > 1e-2)
    Xi = saltation_matrix(make_bundle(gx, Rx), f_minus, f_plus)
    np.testing.assert_allclose(Xi @ f_minus, f_plus, atol=1e-9 * (1 + np.abs(Xi).max() * np.abs(f_minus).max()))


@given(vec(3), vec(3), mat(3, 2), vec(2))
def test_event_time_keeps_guard_on_surface(gx, f_minus, Z, gp):
    assume(abs(gx @ f_minus) > 1e-2)
    b = make_bundle(gx, np.eye(3), gp=gp)
    dtau = event_time_sensitivity(b, Z, f_minus)
    # first-order guard variation along the perturbed crossing vanishes
    np.testing.assert_allclose(gx @ (Z + np.outer(f_minus, dtau)) + gp, 0.0, atol=1e-9 * (1 + np.abs(dtau).max()))


@given(mat(3, 3), mat(3, 2), mat(3, 2), mat(3, 2))
def test_sensitivity_jump_is_affine(Xi, Z1, Z2, M):
    lhs = sensitivity_jump(Xi, Z1 + Z2, M)
    rhs = sensitivity_jump(Xi, Z1, M) + sensitivity_jump(Xi, Z2, np.zeros_like(M))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@given(mat(2, 3), mat(2, 3), spd(2))
def test_increment_decomposition(J_minus, J_plus, V):
    inc = event_increment(J_minus, J_plus, V)
    scale = 1.0 + np.abs(inc.quadratic).max() + np.abs(J_plus).max() ** 2 * np.abs(np.linalg.inv(V)).max()
    np.testing.assert_allclose(inc.delta, inc.cross + inc.quadratic, atol=1e-11 * scale)
    np.testing.assert_array_equal(inc.delta, inc.delta.T)


@given(arrays(float, (6, 2, 3), elements=finite), spd(2), st.floats(0.1, 10.0))
def test_flow_information_symmetric_psd_and_scaling(J, V, c):
    t = np.linspace(0.0, 1.0, 6)
    F = flow_information(t, J, V)
    np.testing.assert_array_equal(F, F.T)
    lam = np.linalg.eigvalsh(F)
    assert lam[0] >= -1e-12 * max(lam[-1], 1.0)
    np.testing.assert_allclose(flow_information(t, J, c * V), F / c, rtol=1e-10, atol=1e-14)


@given(arrays(float, 8, elements=st.floats(0.01, 1.0)))
def test_trapezoid_weights_sum_to_span(steps):
    t = np.concatenate([[0.0], np.cumsum(steps)])
    w = trapezoid_weights(t)
    assert np.all(w > 0)
    np.testing.assert_allclose(w.sum(), t[-1], rtol=1e-13)


@given(spd(4))
def test_metrics_conventions(F):
    m = info_metrics(F)
    assert 0 <= m.rank <= 4
    np.testing.assert_allclose(m.sigma, np.sqrt(max(m.lambda_min, 0.0)) if m.rank == 4 else 0.0)


@given(spd(4), st.sampled_from([[0], [1, 2], [0, 3], [0, 1, 2]]))
def test_schur_complement_matches_inverse_block(F, a):
    cond = conditional_fim(F, a)
    inv_block = np.linalg.inv(np.linalg.inv(F)[np.ix_(a, a)])
    np.testing.assert_allclose(cond.F, inv_block, rtol=1e-8, atol=1e-10)


@given(spd(3))
def test_crlb_is_inverse(F):
    np.testing.assert_allclose(crlb(F) @ F, np.eye(3), atol=1e-8)


@given(spd(2), spd(2))
def test_lambda_floor_is_smallest_precision(V, Vj):
    noise = NoiseModel(V, V_events=Vj)
    expected = min(np.linalg.eigvalsh(np.linalg.inv(V))[0], np.linalg.eigvalsh(np.linalg.inv(Vj))[0])
    np.testing.assert_allclose(noise.lambda_floor(3), expected, rtol=1e-10)
