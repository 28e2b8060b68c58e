import json

import numpy as np
import pytest
from sklearn.base import clone

from saltfim.estimation import (
    FitConfig,
    MeasurementSet,
    monte_carlo_crlb,
    nls_fit,
    predict_outputs,
    simulate_measurements,
)
from saltfim.estimators import HybridMLEstimator
from saltfim.exceptions import ValidationError
from saltfim.hybrid import IntegratorConfig, simulate
from saltfim.information import NoiseModel, crlb, state_output
from saltfim.systems import BuckParams, buck_dcm_spec

from conftest import continuous_switch_spec, linear_scalar_spec

FINE = IntegratorConfig(max_step=1e-2)


def test_noiseless_measurements_equal_outputs():
    spec = linear_scalar_spec()
    arc = simulate(spec, [3.0], T=1.0, config=FINE)
    times = np.linspace(0.0, 1.0, 11)
    meas = simulate_measurements(arc, state_output([0], 1, 1), NoiseModel(np.eye(1)), times, 0, noiseless=True)
    np.testing.assert_allclose(meas.y[:, 0], 3.0 * times, rtol=1e-12, atol=1e-15)


def test_noise_moments_over_many_draws():
    spec = continuous_switch_spec()
    arc = simulate(spec, [0.2], T=0.9)
    out = state_output([0, 1], 2, 1)
    V = np.array([[0.04, 0.012], [0.012, 0.01]])
    times = np.linspace(0.0, 0.9, 100_000)
    meas = simulate_measurements(arc, out, NoiseModel(V), times, seed=11)
    clean = simulate_measurements(arc, out, NoiseModel(V), times, seed=11, noiseless=True)
    eps = meas.y - clean.y
    n = times.size
    assert np.all(np.abs(eps.mean(axis=0)) <= 4.0 * np.sqrt(np.diag(V)) / np.sqrt(n))
    assert np.linalg.norm(np.cov(eps.T) - V) <= 0.05 * np.linalg.norm(V)


def test_density_sampling_scales_by_weights():
    spec = linear_scalar_spec()
    arc = simulate(spec, [1.0], T=1.0)
    times = np.linspace(0.0, 1.0, 5)
    meas = simulate_measurements(arc, state_output([0], 1, 1), NoiseModel(np.eye(1)), times, 0, sampling="density")
    np.testing.assert_allclose(meas.flow_weights, [0.125, 0.25, 0.25, 0.25, 0.125])


def test_seed_determinism():
    spec = buck_dcm_spec()
    theta = BuckParams().theta
    arc = simulate(spec, theta, T=0.001)
    out = state_output([0, 1], 2, 3)
    noise = NoiseModel(np.eye(2) * 1e-8, V_events=None)
    times = np.linspace(0.0, 0.001, 101)
    a = simulate_measurements(arc, out, noise, times, seed=5)
    b = simulate_measurements(arc, out, noise, times, seed=5)
    c = simulate_measurements(arc, out, noise, times, seed=6)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)
    fa, fb = nls_fit(a, spec, out, theta), nls_fit(b, spec, out, theta)
    np.testing.assert_array_equal(fa.theta_hat, fb.theta_hat)
    assert fa.final_cost == fb.final_cost


def test_linear_model_exact_in_one_step():
    spec = linear_scalar_spec()
    out = state_output([0], 1, 1)
    times = np.linspace(0.0, 1.0, 21)
    arc = simulate(spec, [3.0], T=1.0, config=FINE)
    meas = simulate_measurements(arc, out, NoiseModel(np.eye(1)), times, 0, noiseless=True)
    fit = nls_fit(meas, spec, out, [1.0], FitConfig(integrator=FINE))
    assert fit.converged and fit.iterations == 1
    assert fit.theta_hat[0] == pytest.approx(3.0, rel=1e-10)


def test_noiseless_buck_recovery():
    params = BuckParams()
    spec = buck_dcm_spec(params)
    out = state_output([0, 1], 2, 3)
    T = 0.001
    times = np.linspace(0.0, T, 201)
    arc = simulate(spec, params.theta, T=T)
    meas = simulate_measurements(arc, out, NoiseModel(np.eye(2) * 1e-8, V_events=None), times, 0, noiseless=True)
    fit = nls_fit(meas, spec, out, 1.2 * params.theta)
    assert fit.converged
    np.testing.assert_allclose(fit.theta_hat, params.theta, rtol=1e-6)


def test_noisy_buck_within_crlb_band():
    params = BuckParams()
    spec = buck_dcm_spec(params)
    out = state_output([0, 1], 2, 3)
    T = 0.002
    times = np.linspace(0.0, T, 201)
    noise = NoiseModel(np.eye(2) * 1e-8, V_events=None)
    arc = simulate(spec, params.theta, T=T)
    meas = simulate_measurements(arc, out, noise, times, seed=3)
    fit = nls_fit(meas, spec, out, params.theta)
    assert fit.converged
    pred = predict_outputs(spec, out, params.theta, times, T)
    from saltfim.estimation import measurement_information

    sd = np.sqrt(np.diag(crlb(measurement_information(pred.J, pred.event_J, meas))))
    assert np.all(np.abs(fit.theta_hat - params.theta) <= 5.0 * sd)


def test_monte_carlo_requires_runs():
    spec = linear_scalar_spec()
    with pytest.raises(ValidationError):
        monte_carlo_crlb(spec, [1.0], state_output([0], 1, 1), NoiseModel(np.eye(1)), np.linspace(0, 1, 5), 1, 0)


def test_monte_carlo_summary_json():
    spec = linear_scalar_spec()
    out = state_output([0], 1, 1)
    cfg = FitConfig(integrator=FINE)
    mc = monte_carlo_crlb(spec, [1.0], out, NoiseModel(np.eye(1), V_events=None), np.linspace(0, 1, 51), 50, 0,
                          fit_config=cfg)
    data = json.loads(mc.to_json())
    assert set(data) == {"runs", "converged", "empirical_cov", "crlb", "efficiency"}
    assert data["runs"] == 50 and data["converged"] == 50
    threaded = monte_carlo_crlb(spec, [1.0], out, NoiseModel(np.eye(1), V_events=None), np.linspace(0, 1, 51), 50,
                                0, fit_config=cfg, threads=3)
    np.testing.assert_array_equal(threaded.estimates, mc.estimates)


def test_measurement_set_validation():
    with pytest.raises(ValidationError):
        MeasurementSet(np.array([0.0, 0.0]), np.zeros((2, 1)), NoiseModel(np.eye(1)), 0)
    with pytest.raises(ValidationError):
        MeasurementSet(np.array([0.0, 1.0]), np.zeros((2, 1)), NoiseModel(np.eye(1)), 0, sampling="bursty")


def test_sklearn_estimator_round_trip():
    spec = linear_scalar_spec()
    out = state_output([0], 1, 1)
    times = np.linspace(0.0, 1.0, 21)
    arc = simulate(spec, [2.5], T=1.0, config=FINE)
    y = simulate_measurements(arc, out, NoiseModel(np.eye(1)), times, 0, noiseless=True).y
    est = HybridMLEstimator(spec, out, NoiseModel(np.eye(1)), [1.0], fit_config=FitConfig(integrator=FINE))
    assert clone(est).get_params()["theta_init"] == [1.0]
    est.fit(times[:, None], y)
    assert est.theta_[0] == pytest.approx(2.5, rel=1e-10)
    np.testing.assert_allclose(est.predict(times), y, rtol=1e-10, atol=1e-14)
    assert est.score(times, y) == pytest.approx(0.0, abs=1e-16)
    with pytest.raises(ValidationError):
        HybridMLEstimator(spec, out, NoiseModel(np.eye(1)), [1.0]).predict(times)
