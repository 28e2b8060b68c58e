"""Planar switching-surface example used to contrast saltation and reset maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..hybrid import HybridSystemSpec, ModeSpec, TransitionSpec


@dataclass(frozen=True)
class Fig3Case:
    guard_gradient: np.ndarray
    f_minus: np.ndarray
    f_plus: np.ndarray
    reset_jacobian: np.ndarray
    radius: float
    guard_time_derivative: float = 0.0


def fig3_case() -> Fig3Case:
    return Fig3Case(
        guard_gradient=np.array([1.0, 0.0]),
        f_minus=np.array([1.0, -1.0]),
        f_plus=np.array([1.0, 2.0]),
        reset_jacobian=np.array([[1.0, 0.0], [0.0, -0.7]]),
        radius=0.026,
    )


def case_saltation(case: Fig3Case | None = None) -> np.ndarray:
    """Saltation matrix of the case data (time-invariant reset)."""
    from ..sensitivity import JacobianBundle, saltation_matrix

    case = case or fig3_case()
    n = case.guard_gradient.size
    bundle = JacobianBundle(np.zeros((n, n)), np.zeros((n, 1)), case.guard_gradient, np.zeros(1),
                            case.guard_time_derivative, case.reset_jacobian, np.zeros((n, 1)),
                            np.zeros(n))
    return saltation_matrix(bundle, case.f_minus, case.f_plus)


def disk_images(case: Fig3Case | None = None, saltation: np.ndarray | None = None, n_points: int = 64):
    """Boundary of the perturbation disk and its images under ``D_x R`` and ``Xi``."""
    case = case or fig3_case()
    if saltation is None:
        saltation = case_saltation(case)
    angles = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    disk = case.radius * np.column_stack([np.cos(angles), np.sin(angles)])
    return disk, disk @ case.reset_jacobian.T, disk @ np.asarray(saltation).T


def fig3_spec() -> HybridSystemSpec:
    """Nonlinear two-mode system whose crossing at the origin reproduces the case data.

    Pre-event field ``(1 + x2^2/2, -1 + x1^2 + x2^2/5)``, post-event field
    ``(1 + x1 x2/5, 2 - 2 x2^2/5)``, guard ``x1`` (rising) and reset
    ``(x1, -0.7 x2 + x2^2/2)``; at ``x = 0`` these give ``f- = (1, -1)``,
    ``f+ = (1, 2)`` and ``D_x R = diag(1, -0.7)``. A single scalar parameter
    scales the post-event drift so the system has a parameter to differentiate.
    """

    def pre(x, th, t):
        return np.array([1.0 + 0.5 * x[1] ** 2, -1.0 + x[0] ** 2 + 0.2 * x[1] ** 2])

    def post(x, th, t):
        return np.array([1.0 + 0.2 * x[0] * x[1], th[0] * (2.0 - 0.4 * x[1] ** 2)])

    def reset(x, th, t):
        return np.array([x[0], -0.7 * x[1] + 0.5 * x[1] ** 2])

    modes = [ModeSpec("pre", pre), ModeSpec("post", post)]
    transitions = [TransitionSpec("pre", "post", lambda x, th, t: x[0], "rising", reset=reset,
                                  name="pre->post")]
    return HybridSystemSpec(2, 1, modes, transitions, "pre", np.array([-0.5, 0.55]), name="fig3",
                            param_names=("drift",))
