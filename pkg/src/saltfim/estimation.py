"""Noisy measurements, Gauss-Newton maximum likelihood and Monte-Carlo CRLB checks."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from ._validation import as_vector
from .exceptions import EstimationError, SaltfimError, ValidationError
from .hybrid import AlgebraicCache, HybridArc, HybridSystemSpec, IntegratorConfig, simulate
from .information import NoiseModel, OutputMap, crlb, trapezoid_weights
from .sensitivity import SensitivityTrajectory, propagate

SAMPLING_MODES = ("iid", "density")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based 64-bit generator (Philox) keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class MeasurementSet:
    """Flow samples ``y(t_i)`` and optional post-event samples.

    With ``sampling="density"`` the flow noise at ``t_i`` has covariance
    ``V / w_i`` (``w_i`` trapezoid weights), the discretization of white
    noise with spectral density ``V``; ``"iid"`` uses ``V`` for every sample.
    """

    times: np.ndarray
    y: np.ndarray
    noise: NoiseModel
    seed: int
    sampling: str = "iid"
    event_indices: list[int] = field(default_factory=list)
    event_y: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.y.shape[0] != self.times.size:
            self.y = self.y.reshape(self.times.size, -1)
        if self.sampling not in SAMPLING_MODES:
            raise ValidationError(f"sampling must be one of {SAMPLING_MODES}")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValidationError("sample times must be strictly increasing")

    @property
    def flow_weights(self) -> np.ndarray:
        """Information weight per flow sample (``w_i`` or one)."""
        if self.sampling == "density":
            return trapezoid_weights(self.times)
        return np.ones(self.times.size)

    @property
    def horizon(self) -> float:
        return float(self.times[-1]) if self.times.size else 0.0


@dataclass
class _Prediction:
    y: np.ndarray
    J: np.ndarray
    event_y: np.ndarray
    event_J: np.ndarray
    arc: HybridArc


def _locate(sens: SensitivityTrajectory, t: float):
    for seg in sens.segments:
        if seg.t_start <= t < seg.t_end:
            return seg
    return sens.segments[-1]


def predict_outputs(spec: HybridSystemSpec, out: OutputMap, theta, times, horizon: float,
                    config: IntegratorConfig | None = None, event_indices=(), with_jacobian: bool = True,
                    arc: HybridArc | None = None) -> _Prediction:
    """Model outputs (and their parameter Jacobians) at sample times and after selected events.

    Post-event outputs are differentiated along the moving event time:
    ``d h(x(tau+)) / d theta = D_x h (Z+ + f+ dtau/dtheta) + D_t h dtau/dtheta + D_theta h``.
    """
    theta = as_vector(theta, "theta", spec.n_params)
    if arc is None:
        arc = simulate(spec, theta, T=horizon, config=config)
    cache = AlgebraicCache(config)
    m, p = out.n_outputs, spec.n_params
    times = np.asarray(times, dtype=float)
    Y = np.zeros((times.size, m))
    J = np.zeros((times.size, m, p))
    sens = propagate(arc, spec, theta, config=config) if with_jacobian else None
    for i, t in enumerate(times):
        # outputs always come from the state-only arc so costs agree across calls
        seg = arc.segment_at(t)
        x = seg(t)
        if with_jacobian:
            _, Z = _locate(sens, t).state_and_Z(t)
            val, hx, hp = out.jacobians(x, theta, t, spec, seg.mode, cache)
            Y[i] = val
            J[i] = hx @ Z + hp
        else:
            Y[i] = out.evaluate(x, theta, t, spec, seg.mode, cache)
    event_indices = list(event_indices)
    EY = np.zeros((len(event_indices), m))
    EJ = np.zeros((len(event_indices), m, p))
    for k, j in enumerate(event_indices):
        if j >= len(arc.events):
            raise EstimationError(f"event {j} does not occur at this parameter value")
        ev = arc.events[j]
        EY[k] = out.evaluate(ev.post_state, theta, ev.time, spec, ev.target, cache)
        if with_jacobian:
            jump = sens.jumps[j]
            _, hx, hp = out.jacobians(ev.post_state, theta, ev.time, spec, ev.target, cache)
            f_plus = jump.f_plus
            dtau = jump.event_time_gradient
            ht = _output_time_derivative(out, ev.post_state, theta, ev.time, spec, ev.target, cache)
            EJ[k] = hx @ (jump.Z_post + np.outer(f_plus, dtau)) + np.outer(ht, dtau) + hp
    return _Prediction(Y, J, EY, EJ, arc)


def _output_time_derivative(out, x, theta, t, spec, q, cache, scale: float = 1e-7):
    h = max(abs(t), 1.0) * scale
    up = out.evaluate(x, theta, t + h, spec, q, cache)
    dn = out.evaluate(x, theta, t - h, spec, q, cache)
    return (up - dn) / (2.0 * h)


def simulate_measurements(arc: HybridArc, out: OutputMap, noise: NoiseModel, times, seed: int,
                          spec: HybridSystemSpec | None = None, sampling: str = "iid",
                          event_samples: bool | None = None, noiseless: bool = False) -> MeasurementSet:
    """``y_i = h(x(t_i), theta, t_i) + eps_i`` with Cholesky-colored Gaussian noise.

    Args:
        arc: Nominal arc providing ``x(t)``.
        times: Flow sample times inside the horizon.
        seed: Seed of the counter-based generator; equal seeds give equal sets.
        sampling: ``"iid"`` (covariance ``V``) or ``"density"`` (``V / w_i``).
        event_samples: Add one sample right after each event that has a
            covariance in ``noise``; defaults to whether any event does.
        noiseless: Return exact outputs (same layout) for consistency checks.
    """
    if out.n_outputs != noise.m:
        raise ValidationError("noise dimension does not match the output map")
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < arc.segments[0].t_start - 1e-12 or times[-1] > arc.horizon[1] + 1e-12:
        raise ValidationError("sample times must lie within the arc horizon")
    theta = np.asarray(arc.theta, dtype=float)
    cache = AlgebraicCache()
    clean = np.array([out.evaluate(arc.segment_at(t)(t), theta, t, spec, arc.segment_at(t).mode, cache)
                      for t in times])
    if event_samples is None:
        event_samples = noise.has_event_measurements and len(arc.events) > 0
    ev_idx = [j for j in range(len(arc.events)) if event_samples and noise.event_covariance(j) is not None]
    ev_clean = np.array([out.evaluate(arc.events[j].post_state, theta, arc.events[j].time, spec,
                                      arc.events[j].target, cache) for j in ev_idx]).reshape(len(ev_idx), out.n_outputs)
    meas = MeasurementSet(times, clean, noise, int(seed), sampling, ev_idx, ev_clean)
    if noiseless:
        return meas
    rng = make_rng(seed)
    L = np.linalg.cholesky(noise.V)
    scale = 1.0 / np.sqrt(meas.flow_weights)
    z = rng.standard_normal((times.size, noise.m))
    meas.y = clean + (z @ L.T) * scale[:, None]
    if ev_idx:
        ev_noise = np.zeros_like(ev_clean)
        for k, j in enumerate(ev_idx):
            Lj = np.linalg.cholesky(noise.event_covariance(j))
            ev_noise[k] = Lj @ rng.standard_normal(noise.m)
        meas.event_y = ev_clean + ev_noise
    return meas


def measurement_information(J, event_J, meas: MeasurementSet) -> np.ndarray:
    """Fisher information of a measurement set for stacked output Jacobians."""
    A = _whitened_design(J, event_J, meas)
    return 0.5 * (A.T @ A + (A.T @ A).T)


def _whitening(meas: MeasurementSet):
    L = np.linalg.cholesky(meas.noise.V)
    sw = np.sqrt(meas.flow_weights)
    ev = [np.linalg.cholesky(meas.noise.event_covariance(j)) for j in meas.event_indices]
    return L, sw, ev


def _whitened_design(J, event_J, meas):
    L, sw, ev = _whitening(meas)
    N, m, p = J.shape
    rows = [solve_triangular(L, J[i], lower=True) * sw[i] for i in range(N)]
    rows += [solve_triangular(Lj, event_J[k], lower=True) for k, Lj in enumerate(ev)]
    return np.vstack(rows) if rows else np.zeros((0, p))


def _whitened_residual(pred: _Prediction, meas: MeasurementSet):
    L, sw, ev = _whitening(meas)
    r = meas.y - pred.y
    parts = [solve_triangular(L, r.T, lower=True).T * sw[:, None]]
    if meas.event_indices:
        er = meas.event_y - pred.event_y
        parts += [solve_triangular(Lj, er[k], lower=True)[None, :] for k, Lj in enumerate(ev)]
    return np.concatenate([p_.ravel() for p_ in parts])


def _relative_step(step, theta) -> float:
    scale = np.maximum(np.abs(theta), np.finfo(float).tiny)
    return float(np.max(np.abs(step) / scale))


@dataclass
class FitConfig:
    """Gauss-Newton controls.

    ``decrease_tol`` is in whitened cost units: when no trial step lowers the
    cost and the model-predicted decrease is below it, the fit is accepted.
    """

    max_iters: int = 100
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    decrease_tol: float = 1e-6
    max_halvings: int = 30
    integrator: IntegratorConfig | None = None


@dataclass
class FitResult:
    theta_hat: np.ndarray
    iterations: int
    final_cost: float
    converged: bool
    gauss_newton_hessian: np.ndarray
    gradient_norm: float = float("nan")
    message: str = ""

    def to_dict(self) -> dict:
        return {"theta_hat": self.theta_hat.tolist(), "iterations": self.iterations,
                "final_cost": self.final_cost, "converged": self.converged,
                "gauss_newton_hessian": self.gauss_newton_hessian.tolist(),
                "gradient_norm": self.gradient_norm, "message": self.message}


def nls_fit(meas: MeasurementSet, spec: HybridSystemSpec, out: OutputMap, theta_init,
            config: FitConfig | None = None) -> FitResult:
    """Gauss-Newton minimization of ``1/2 sum r^T C^-1 r`` with halving step control.

    The regressor comes from saltation-mode sensitivities, so fits may cross
    event-sequence changes; trial points where simulation fails count as
    infinite cost.
    """
    config = config or FitConfig()
    theta = as_vector(theta_init, "theta_init", spec.n_params).copy()
    horizon = meas.horizon

    def evaluate(th, jac):
        pred = predict_outputs(spec, out, th, meas.times, horizon, config.integrator,
                               meas.event_indices, with_jacobian=jac)
        e = _whitened_residual(pred, meas)
        return pred, e, 0.5 * float(e @ e)

    try:
        pred, e, cost = evaluate(theta, True)
    except SaltfimError as exc:
        raise EstimationError(f"model evaluation failed at the initial point: {exc}") from exc
    if not np.isfinite(cost):
        raise EstimationError("non-finite cost at the initial point")
    A = _whitened_design(pred.J, pred.event_J, meas)
    grad = -A.T @ e
    it = 0
    converged = False
    message = "maximum iterations reached"
    while it < config.max_iters:
        if np.max(np.abs(grad)) <= config.grad_tol:
            converged, message = True, "gradient tolerance"
            break
        step, *_ = np.linalg.lstsq(A, e, rcond=None)
        if 0.5 * float(np.sum((A @ step) ** 2)) <= config.decrease_tol:
            converged, message = True, "Gauss-Newton decrement below tolerance"
            break
        lam = 1.0
        accepted = False
        for _ in range(config.max_halvings):
            trial = theta + lam * step
            try:
                # trial points may be far off; overflow there only means a rejected step
                with np.errstate(over="ignore", invalid="ignore"):
                    _, _, cost_t = evaluate(trial, False)
            except (SaltfimError, FloatingPointError):
                cost_t = np.inf
            if np.isfinite(cost_t) and cost_t <= cost:
                accepted = True
                break
            lam *= 0.5
        it += 1
        rel_step = _relative_step(lam * step, theta)
        if not accepted:
            # below the integrator's noise floor the cost cannot decrease further
            if 0.5 * float(np.sum((A @ step) ** 2)) <= config.decrease_tol:
                converged, message = True, "predicted decrease below tolerance"
            else:
                message = "line search failed"
            break
        theta = trial
        pred, e, cost = evaluate(theta, True)
        if not np.isfinite(cost):
            raise EstimationError("cost became non-finite")
        A = _whitened_design(pred.J, pred.event_J, meas)
        grad = -A.T @ e
        if rel_step <= config.step_tol:
            converged, message = True, "step tolerance"
            break
    H = A.T @ A
    return FitResult(theta, it, cost, converged, 0.5 * (H + H.T), float(np.max(np.abs(grad))), message)


@dataclass
class MonteCarloSummary:
    runs: int
    converged: int
    empirical_cov: np.ndarray
    crlb: np.ndarray
    efficiency: float
    estimates: np.ndarray
    theta_true: np.ndarray

    def crlb_dominance_margin(self) -> float:
        """Smallest eigenvalue of ``empirical_cov - crlb``."""
        return float(np.linalg.eigvalsh(self.empirical_cov - self.crlb)[0])

    def sampling_tolerance(self) -> float:
        return 3.0 * float(np.linalg.norm(self.empirical_cov, 2)) * np.sqrt(2.0 / self.runs)

    def to_dict(self) -> dict:
        return {"runs": self.runs, "converged": self.converged, "empirical_cov": self.empirical_cov.tolist(),
                "crlb": self.crlb.tolist(), "efficiency": self.efficiency}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _thread_count(requested: int | None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SALTFIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError("SALTFIM_THREADS must be an integer") from exc
    return 1


def monte_carlo_crlb(spec: HybridSystemSpec, theta_true, out: OutputMap, noise: NoiseModel, times,
                     runs: int, seed: int, theta_init=None, sampling: str = "density",
                     fit_config: FitConfig | None = None, threads: int | None = None) -> MonteCarloSummary:
    """Repeat measurement simulation and fitting; compare the spread with ``F^-1``.

    ``F`` is the information of the measurement design at ``theta_true``
    (flow samples plus any post-event samples), built from saltation-mode
    sensitivities. Run ``i`` uses seed ``seed + i``.
    """
    if int(runs) < 50:
        raise ValidationError("monte_carlo_crlb needs at least 50 runs")
    runs = int(runs)
    theta_true = as_vector(theta_true, "theta_true", spec.n_params)
    theta_init = theta_true if theta_init is None else as_vector(theta_init, "theta_init", spec.n_params)
    fit_config = fit_config or FitConfig()
    times = np.asarray(times, dtype=float)
    arc = simulate(spec, theta_true, T=float(times[-1]), config=fit_config.integrator)
    template = simulate_measurements(arc, out, noise, times, seed, spec, sampling, noiseless=True)
    pred = predict_outputs(spec, out, theta_true, times, float(times[-1]), fit_config.integrator,
                           template.event_indices, arc=arc)
    F = measurement_information(pred.J, pred.event_J, template)
    bound = crlb(F)

    def one(i):
        meas = simulate_measurements(arc, out, noise, times, seed + i, spec, sampling)
        try:
            return nls_fit(meas, spec, out, theta_init, fit_config)
        except (SaltfimError, np.linalg.LinAlgError):
            return None

    n_threads = _thread_count(threads)
    if n_threads == 1:
        results = [one(i) for i in range(runs)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, range(runs)))
    good = [r.theta_hat for r in results if r is not None and r.converged]
    if len(good) < 0.8 * runs:
        raise EstimationError(f"only {len(good)} of {runs} fits converged")
    est = np.array(good)
    cov = np.atleast_2d(np.cov(est.T, ddof=1))
    efficiency = float(np.trace(bound) / np.trace(cov))
    return MonteCarloSummary(runs, len(good), cov, bound, efficiency, est, theta_true)
