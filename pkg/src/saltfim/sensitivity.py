"""Parameter sensitivities along hybrid arcs.

``Z(t) = dx(t)/dtheta`` obeys the variational equation during flows and is
mapped across each event by the saltation matrix plus the parameter
derivative of the reset. Two baselines are provided for comparison: the
reset-Jacobian map (no event-time correction) and a smooth propagation that
ignores events altogether.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.integrate import RK45

from ._numdiff import numeric_derivative, numeric_jacobian
from ._validation import as_matrix, as_vector
from .exceptions import GrazingError, IntegrationError, ValidationError
from .hybrid import (
    AlgebraicCache,
    DenseTrajectory,
    HybridArc,
    HybridSystemSpec,
    IntegratorConfig,
    ModeId,
    TransitionSpec,
    guard_gradients,
)

__all__ = [
    "JacobianBundle",
    "PropagationMode",
    "SensitivityJump",
    "SensitivityTrajectory",
    "event_time_sensitivity",
    "mode_jacobians",
    "numeric_jacobian",
    "propagate",
    "saltation_matrix",
    "sensitivity_jump",
    "transition_bundle",
    "variational_rhs",
]

JACOBIAN_SCALE = 1e-7


class PropagationMode(str, Enum):
    SALTATION = "saltation"
    RESET_JACOBIAN = "reset_jacobian"
    SMOOTH = "smooth_ignore_events"

    @classmethod
    def parse(cls, value) -> "PropagationMode":
        if isinstance(value, cls):
            return value
        if value == "smooth":
            return cls.SMOOTH
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValidationError(f"unknown propagation mode {value!r}; expected one of {names}") from None


@dataclass
class JacobianBundle:
    """Derivatives entering the event maps, all evaluated at ``tau^-``."""

    dfdx: np.ndarray
    dfdtheta: np.ndarray
    dgdx: np.ndarray
    dgdtheta: np.ndarray
    dgdt: float
    dRdx: np.ndarray
    dRdtheta: np.ndarray
    dRdt: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.dRdx).shape[0]
        p = np.asarray(self.dRdtheta).shape[1]
        self.dfdx = as_matrix(self.dfdx, "dfdx", (n, n))
        self.dfdtheta = as_matrix(self.dfdtheta, "dfdtheta", (n, p))
        self.dgdx = as_vector(self.dgdx, "dgdx", n)
        self.dgdtheta = as_vector(self.dgdtheta, "dgdtheta", p)
        self.dgdt = float(self.dgdt)
        self.dRdx = as_matrix(self.dRdx, "dRdx", (n, n))
        self.dRdtheta = as_matrix(self.dRdtheta, "dRdtheta", (n, p))
        self.dRdt = as_vector(self.dRdt, "dRdt", n)
        for name in ("dfdx", "dfdtheta", "dgdx", "dgdtheta", "dRdx", "dRdtheta", "dRdt"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} has non-finite entries")


def variational_rhs(dfdx, dfdtheta, Z) -> np.ndarray:
    dfdx = np.asarray(dfdx, dtype=float)
    dfdtheta = np.asarray(dfdtheta, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if dfdx.ndim != 2 or dfdx.shape[0] != dfdx.shape[1] or Z.shape != dfdtheta.shape \
            or Z.shape[0] != dfdx.shape[0]:
        raise ValidationError(f"shape mismatch: D_x f {dfdx.shape}, D_theta f {dfdtheta.shape}, Z {Z.shape}")
    return dfdx @ Z + dfdtheta


def _guard_rate(bundle: JacobianBundle, f_minus, floor: float) -> float:
    rate = bundle.dgdt + float(bundle.dgdx @ np.asarray(f_minus, dtype=float))
    if not abs(rate) > floor:
        raise GrazingError(f"transversality violated: guard rate {rate:.3e}")
    return rate


def saltation_matrix(bundle: JacobianBundle, f_minus, f_plus, floor: float = 1e-8) -> np.ndarray:
    """First-order map of state perturbations across an event.

    ``Xi = D_x R + (f+ - D_x R f- - D_t R) D_x g / (D_t g + D_x g f-)``.
    """
    f_minus = as_vector(f_minus, "f_minus", bundle.dRdx.shape[0])
    f_plus = as_vector(f_plus, "f_plus", bundle.dRdx.shape[0])
    rate = _guard_rate(bundle, f_minus, floor)
    numer = f_plus - bundle.dRdx @ f_minus - bundle.dRdt
    return bundle.dRdx + np.outer(numer, bundle.dgdx) / rate


def sensitivity_jump(saltation, Z_minus, dRdtheta) -> np.ndarray:
    saltation = np.asarray(saltation, dtype=float)
    Z_minus = np.asarray(Z_minus, dtype=float)
    dRdtheta = np.asarray(dRdtheta, dtype=float)
    n = saltation.shape[0]
    if saltation.shape != (n, n) or Z_minus.shape[0] != n or Z_minus.shape != dRdtheta.shape:
        raise ValidationError(
            f"shape mismatch: Xi {saltation.shape}, Z {Z_minus.shape}, D_theta R {dRdtheta.shape}"
        )
    return saltation @ Z_minus + dRdtheta


def event_time_sensitivity(bundle: JacobianBundle, Z_minus, f_minus, floor: float = 1e-8) -> np.ndarray:
    """``d tau / d theta = -(D_x g Z^- + D_theta g) / (D_t g + D_x g f^-)``."""
    Z_minus = as_matrix(Z_minus, "Z_minus", (bundle.dgdx.size, bundle.dgdtheta.size))
    rate = _guard_rate(bundle, f_minus, floor)
    return -(bundle.dgdx @ Z_minus + bundle.dgdtheta) / rate


# --------------------------------------------------------------------------- #
# Jacobian sourcing


def mode_jacobians(spec: HybridSystemSpec, q: ModeId, x, theta, t: float,
                   cache: AlgebraicCache | None = None, scale: float = JACOBIAN_SCALE):
    """Return ``(f, D_x f, D_theta f)`` for mode ``q``.

    For modes with an algebraic layer the reduced derivatives are assembled
    with the implicit function theorem: ``dy = -c_y^{-1} (c_x dx + c_theta dtheta)``.
    """
    mode = spec.mode(q)
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, p = spec.n_states, spec.n_params
    if mode.algebraic is None:
        f = np.asarray(mode.dynamics(x, theta, t), dtype=float)
        if mode.state_jacobian is not None:
            fx = np.asarray(mode.state_jacobian(x, theta, t), dtype=float)
        else:
            fx = numeric_jacobian(lambda xx: mode.dynamics(xx, theta, t), x, scale)
        if mode.param_jacobian is not None:
            fp = np.asarray(mode.param_jacobian(x, theta, t), dtype=float)
        else:
            fp = numeric_jacobian(lambda pp: mode.dynamics(x, pp, t), theta, scale)
        return f, fx.reshape(n, n), fp.reshape(n, p)

    cache = cache or AlgebraicCache()
    y = cache.solve(mode, x, theta, t)
    layer = mode.algebraic
    m = layer.n_alg
    f = np.asarray(mode.dynamics(x, y, theta, t), dtype=float)

    def stacked(v):
        xx, yy, pp = v[:n], v[n:n + m], v[n + m:]
        return np.concatenate([np.asarray(mode.dynamics(xx, yy, pp, t), dtype=float),
                               np.asarray(layer.residual(xx, yy, pp, t), dtype=float)])

    full = numeric_jacobian(stacked, np.concatenate([x, y, theta]), scale)
    Fx, Fy, Fp = full[:n, :n], full[:n, n:n + m], full[:n, n + m:]
    cx, cy, cp = full[n:, :n], full[n:, n:n + m], full[n:, n + m:]
    dy = np.linalg.solve(cy, np.hstack([cx, cp]))
    fx = Fx - Fy @ dy[:, :n]
    fp = Fp - Fy @ dy[:, n:]
    return f, fx, fp


def algebraic_sensitivities(spec: HybridSystemSpec, q: ModeId, x, theta, t: float,
                            cache: AlgebraicCache | None = None, scale: float = JACOBIAN_SCALE):
    """Return ``(y, dy/dx, dy/dtheta)`` for a DAE mode."""
    mode = spec.mode(q)
    layer = mode.algebraic
    if layer is None:
        raise ValidationError(f"mode {q!r} has no algebraic layer")
    cache = cache or AlgebraicCache()
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n, m = spec.n_states, layer.n_alg
    y = cache.solve(mode, x, theta, t)
    full = numeric_jacobian(lambda v: layer.residual(v[:n], v[n:n + m], v[n + m:], t),
                            np.concatenate([x, y, theta]), scale)
    cx, cy, cp = full[:, :n], full[:, n:n + m], full[:, n + m:]
    dy = -np.linalg.solve(cy, np.hstack([cx, cp]))
    return y, dy[:, :n], dy[:, n:]


def transition_bundle(spec: HybridSystemSpec, transition: TransitionSpec, x_minus, theta, tau: float,
                      dfdx=None, dfdtheta=None, scale: float = JACOBIAN_SCALE) -> JacobianBundle:
    n, p = spec.n_states, spec.n_params
    x_minus = np.asarray(x_minus, dtype=float)
    theta = np.asarray(theta, dtype=float)
    gx, gp, gt = guard_gradients(transition, x_minus, theta, tau, scale)
    if transition.identity_reset:
        Rx, Rp, Rt = np.eye(n), np.zeros((n, p)), np.zeros(n)
    else:
        reset = transition.reset
        if transition.reset_state_jacobian is not None:
            Rx = np.asarray(transition.reset_state_jacobian(x_minus, theta, tau), dtype=float)
        else:
            Rx = numeric_jacobian(lambda xx: reset(xx, theta, tau), x_minus, scale)
        if transition.reset_param_jacobian is not None:
            Rp = np.asarray(transition.reset_param_jacobian(x_minus, theta, tau), dtype=float)
        else:
            Rp = numeric_jacobian(lambda pp: reset(x_minus, pp, tau), theta, scale)
        if transition.reset_time_derivative is not None:
            Rt = np.asarray(transition.reset_time_derivative(x_minus, theta, tau), dtype=float)
        else:
            Rt = numeric_derivative(lambda s: reset(x_minus, theta, s), tau, scale)
    return JacobianBundle(
        dfdx=np.zeros((n, n)) if dfdx is None else dfdx,
        dfdtheta=np.zeros((n, p)) if dfdtheta is None else dfdtheta,
        dgdx=gx, dgdtheta=gp, dgdt=gt,
        dRdx=Rx, dRdtheta=Rp, dRdt=Rt,
    )


# --------------------------------------------------------------------------- #
# propagation


@dataclass
class SensitivitySegment:
    mode: ModeId
    t_start: float
    t_end: float
    grid: np.ndarray
    states: np.ndarray
    Z: np.ndarray
    interpolant: DenseTrajectory

    def state_and_Z(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.states.shape[1]
        v = self.interpolant(t)
        return v[:n], v[n:].reshape(n, -1)


@dataclass
class SensitivityJump:
    index: int
    time: float
    saltation: np.ndarray
    reset_jacobian: np.ndarray
    Z_pre: np.ndarray
    Z_post: np.ndarray
    event_time_gradient: np.ndarray
    dtheta_reset: np.ndarray
    guard_param_correction: np.ndarray
    f_minus: np.ndarray
    f_plus: np.ndarray


@dataclass
class SensitivityTrajectory:
    segments: list[SensitivitySegment]
    jumps: list[SensitivityJump]
    propagation_mode: PropagationMode

    def Z(self, t: float) -> np.ndarray:
        """Sensitivity at ``t`` (right-continuous at events)."""
        return self.state_and_Z(t)[1]

    def state_and_Z(self, t: float):
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg.state_and_Z(t)
        return self.segments[-1].state_and_Z(t)

    @property
    def Z_final(self) -> np.ndarray:
        return self.segments[-1].Z[-1]


class _ConstantPiece:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def __call__(self, t):
        return self.value.copy()


def _augmented_rhs(spec, q, theta, cache):
    n, p = spec.n_states, spec.n_params

    def rhs(t, v):
        x = v[:n]
        Z = v[n:].reshape(n, p)
        f, fx, fp = mode_jacobians(spec, q, x, theta, t, cache)
        return np.concatenate([f, (fx @ Z + fp).ravel()])

    return rhs


def propagate(arc: HybridArc, spec: HybridSystemSpec, theta, Z0=None,
              mode: PropagationMode | str = PropagationMode.SALTATION,
              config: IntegratorConfig | None = None) -> SensitivityTrajectory:
    """Integrate ``Z`` jointly with ``x`` over every arc segment and apply event maps.

    ``mode`` selects the jump rule: ``saltation`` (with the event-time term for
    parameter-dependent guards), ``reset_jacobian`` (``D_x R Z + D_theta R``) or
    ``smooth_ignore_events`` (``Z`` continuous).
    """
    mode = PropagationMode.parse(mode)
    config = config or IntegratorConfig()
    theta = as_vector(theta, "theta", spec.n_params)
    n, p = spec.n_states, spec.n_params
    Z = np.zeros((n, p)) if Z0 is None else as_matrix(Z0, "Z0", (n, p)).copy()
    cache = AlgebraicCache(config)
    segments: list[SensitivitySegment] = []
    jumps: list[SensitivityJump] = []

    for k, seg in enumerate(arc.segments):
        x_start = seg.states[0]
        q = seg.mode
        v0 = np.concatenate([x_start, Z.ravel()])
        if seg.t_end > seg.t_start:
            rhs = _augmented_rhs(spec, q, theta, cache)
            solver = RK45(rhs, seg.t_start, v0, seg.t_end, max_step=config.max_step,
                          rtol=config.rel_tol, atol=config.abs_tol)
            grid, values, breaks, pieces = [seg.t_start], [v0], [seg.t_start], []
            while solver.status == "running":
                msg = solver.step()
                if solver.status == "failed":
                    raise IntegrationError(f"sensitivity integration failed at t = {solver.t:.6g}: {msg}")
                pieces.append(solver.dense_output())
                breaks.append(solver.t)
                grid.append(solver.t)
                values.append(solver.y.copy())
            values = np.array(values)
            interp = DenseTrajectory(breaks, pieces)
        else:
            grid, values = [seg.t_start], v0[None, :]
            interp = DenseTrajectory([seg.t_start, seg.t_start], [_ConstantPiece(v0)])
        grid = np.array(grid)
        states = values[:, :n]
        Zs = values[:, n:].reshape(-1, n, p)
        segments.append(SensitivitySegment(q, seg.t_start, seg.t_end, grid, states, Zs, interp))
        Z = Zs[-1].copy()

        if k < len(arc.events):
            event = arc.events[k]
            jumps.append(_event_jump(spec, arc, event, theta, Z, mode, config, cache))
            Z = jumps[-1].Z_post.copy()

    return SensitivityTrajectory(segments, jumps, mode)


def _event_jump(spec, arc, event, theta, Z_minus, mode, config, cache) -> SensitivityJump:
    tr = spec.transitions[event.transition_index]
    tau = event.time
    x_minus, x_plus = event.pre_state, event.post_state
    f_minus, fx, fp = mode_jacobians(spec, event.source, x_minus, theta, tau, cache)
    f_plus = mode_jacobians(spec, event.target, x_plus, theta, tau, cache)[0]
    bundle = transition_bundle(spec, tr, x_minus, theta, tau, fx, fp)
    floor = config.transversality_floor
    xi = saltation_matrix(bundle, f_minus, f_plus, floor)
    dtau = event_time_sensitivity(bundle, Z_minus, f_minus, floor)
    rate = bundle.dgdt + float(bundle.dgdx @ f_minus)
    correction = np.outer(f_plus - bundle.dRdx @ f_minus - bundle.dRdt, bundle.dgdtheta) / rate
    if mode is PropagationMode.SALTATION:
        Z_plus = sensitivity_jump(xi, Z_minus, bundle.dRdtheta) + correction
    elif mode is PropagationMode.RESET_JACOBIAN:
        Z_plus = bundle.dRdx @ Z_minus + bundle.dRdtheta
        correction = np.zeros_like(correction)
    else:
        Z_plus = Z_minus.copy()
        correction = np.zeros_like(correction)
    return SensitivityJump(
        index=event.index, time=tau, saltation=xi, reset_jacobian=bundle.dRdx,
        Z_pre=Z_minus.copy(), Z_post=Z_plus, event_time_gradient=dtau,
        dtheta_reset=bundle.dRdtheta, guard_param_correction=correction,
        f_minus=f_minus, f_plus=f_plus,
    )
