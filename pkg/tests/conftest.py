import numpy as np
import pytest
from hypothesis import settings

from saltfim.hybrid import HybridSystemSpec, ModeSpec, TransitionSpec

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def linear_scalar_spec(rate_dependent: bool = True) -> HybridSystemSpec:
    """One-state, one-parameter system ``x' = theta`` with no transitions."""
    mode = ModeSpec("m", lambda x, th, t: np.array([th[0]]),
                    state_jacobian=lambda x, th, t: np.zeros((1, 1)),
                    param_jacobian=lambda x, th, t: np.ones((1, 1)))
    return HybridSystemSpec(1, 1, [mode], [], "m", np.zeros(1))


def continuous_switch_spec() -> HybridSystemSpec:
    """Identity reset and a vector field that is continuous across the guard ``x1 = 1``."""

    def field(x, th, t):
        return np.array([1.0, th[0] * x[0]])

    modes = [ModeSpec("a", field), ModeSpec("b", field)]
    tr = [TransitionSpec("a", "b", lambda x, th, t: x[0] - 1.0, "rising")]
    return HybridSystemSpec(2, 1, modes, tr, "a", np.array([0.0, 0.0]))


@pytest.fixture
def linear_spec():
    return linear_scalar_spec()
