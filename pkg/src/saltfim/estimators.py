"""scikit-learn style wrapper around the hybrid maximum-likelihood fit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .estimation import FitConfig, MeasurementSet, nls_fit, predict_outputs
from .exceptions import ValidationError
from .information import NoiseModel, OutputMap
from .hybrid import HybridSystemSpec


class HybridMLEstimator(BaseEstimator):
    """Fit hybrid-model parameters to sampled outputs.

    ``X`` holds the sample times (shape ``(N,)`` or ``(N, 1)``) and ``y`` the
    measured outputs ``(N, m)``. Post-event samples are not part of this
    interface; use :func:`saltfim.estimation.nls_fit` for those.

    Args:
        spec: Hybrid system whose parameters are estimated.
        output: Output map ``h``.
        noise: Measurement noise; only ``V`` is used.
        theta_init: Starting point of the Gauss-Newton iteration.
        sampling: ``"iid"`` or ``"density"`` flow-noise weighting.
        fit_config: Iteration controls.
    """

    def __init__(self, spec: HybridSystemSpec, output: OutputMap, noise: NoiseModel, theta_init,
                 sampling: str = "iid", fit_config: FitConfig | None = None):
        self.spec = spec
        self.output = output
        self.noise = noise
        self.theta_init = theta_init
        self.sampling = sampling
        self.fit_config = fit_config

    @staticmethod
    def _times(X) -> np.ndarray:
        t = np.asarray(X, dtype=float)
        if t.ndim == 2 and t.shape[1] == 1:
            t = t[:, 0]
        if t.ndim != 1:
            raise ValidationError("X must be a vector of sample times")
        return t

    def fit(self, X, y):
        times = self._times(X)
        noise = NoiseModel(self.noise.V, V_events=None)
        meas = MeasurementSet(times, y, noise, seed=0, sampling=self.sampling)
        result = nls_fit(meas, self.spec, self.output, self.theta_init, self.fit_config)
        self.theta_ = result.theta_hat
        self.fit_result_ = result
        self.covariance_ = np.linalg.pinv(result.gauss_newton_hessian)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "theta_"):
            raise ValidationError("estimator is not fitted")
        times = self._times(X)
        cfg = self.fit_config.integrator if self.fit_config else None
        pred = predict_outputs(self.spec, self.output, self.theta_, times, float(times[-1]), cfg,
                               with_jacobian=False)
        return pred.y

    def score(self, X, y) -> float:
        """Negative whitened cost ``-1/2 sum r^T V^-1 r`` (larger is better)."""
        r = np.asarray(y, dtype=float).reshape(-1, self.output.n_outputs) - self.predict(X)
        w = np.linalg.solve(self.noise.V, r.T)
        return -0.5 * float(np.sum(r.T * w))
