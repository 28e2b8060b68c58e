"""Small reference systems with closed-form behaviour."""

from __future__ import annotations

import numpy as np

from ..hybrid import HybridSystemSpec, ModeSpec, TransitionSpec


def bouncing_ball_spec(restitution: float = 0.5, gravity: float = 1.0, height: float = 0.5,
                       velocity: float = 0.0) -> HybridSystemSpec:
    """Ball with state ``(height, velocity)`` and an impact reset ``v+ = -e v-``.

    The parameter is gravity, so the impact time depends on it.
    """
    e = float(restitution)

    def fall(x, th, t):
        return np.array([x[1], -th[0]])

    modes = [ModeSpec("air", fall, state_jacobian=lambda x, th, t: np.array([[0.0, 1.0], [0.0, 0.0]]),
                      param_jacobian=lambda x, th, t: np.array([[0.0], [-1.0]]))]
    transitions = [TransitionSpec(
        "air", "air", lambda x, th, t: x[0], "falling",
        reset=lambda x, th, t: np.array([x[0], -e * x[1]]),
        reset_state_jacobian=lambda x, th, t: np.diag([1.0, -e]),
        reset_param_jacobian=lambda x, th, t: np.zeros((2, 1)),
        reset_time_derivative=lambda x, th, t: np.zeros(2),
        name="impact",
    )]
    spec = HybridSystemSpec(2, 1, modes, transitions, "air", np.array([height, velocity]),
                            name="bouncing_ball", state_names=("h", "v"), param_names=("gravity",))
    return spec


def scalar_rate_spec(threshold: float = 1.0) -> HybridSystemSpec:
    """``x' = theta`` with an identity transition at ``x = threshold`` into a frozen mode."""
    modes = [
        ModeSpec("ramp", lambda x, th, t: np.array([th[0]])),
        ModeSpec("hold", lambda x, th, t: np.array([0.0])),
    ]
    transitions = [TransitionSpec("ramp", "hold", lambda x, th, t: x[0] - threshold, "rising", name="hit")]
    return HybridSystemSpec(1, 1, modes, transitions, "ramp", np.array([0.0]), name="scalar_rate",
                            param_names=("rate",))
