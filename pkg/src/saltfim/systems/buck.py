"""Buck converter in discontinuous conduction mode.

States ``x = (i_L, v_C)``; parameters ``theta = (L, C, r_L)``. Mode ``q1``
has the switch closed, ``q2`` the diode conducting and ``q3`` both off with
the inductor current frozen at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._validation import check_positive
from ..exceptions import ValidationError
from ..hybrid import HybridSystemSpec, ModeSpec, TransitionSpec

STATE_NAMES = ("i_L", "v_C")
PARAM_NAMES = ("L", "C", "r_L")


@dataclass(frozen=True)
class BuckParams:
    L: float = 1e-3
    C: float = 100e-6
    r_L: float = 0.1
    R: float = 10.0
    v_in: float = 12.0
    v_hi: float = 5.05
    v_lo: float = 4.95
    duties: tuple[float, float, float] = (0.4, 0.35, 0.25)
    # "identity" keeps v_C across the q2->q3 event, "printed" uses v_C+ = v_C * L
    reset: str = "identity"
    initial_state: tuple[float, float] = (0.0, 4.95)

    def __post_init__(self):
        for name in ("L", "C", "r_L", "R", "v_in", "v_hi", "v_lo"):
            check_positive(getattr(self, name), name)
        if not self.v_hi > self.v_lo:
            raise ValidationError("v_hi must exceed v_lo")
        d = np.asarray(self.duties, dtype=float)
        if d.shape != (3,) or np.any(d <= 0) or abs(d.sum() - 1.0) > 1e-12:
            raise ValidationError("duties must be three positive fractions summing to one")
        if self.reset not in ("identity", "printed"):
            raise ValidationError("reset must be 'identity' or 'printed'")
        object.__setattr__(self, "duties", tuple(float(v) for v in d))
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.L, self.C, self.r_L])


def _fields(params: BuckParams):
    R, a = params.R, params.v_in

    def f1(x, th, t):
        return np.array([(a - x[1] - th[2] * x[0]) / th[0], (x[0] - x[1] / R) / th[1]])

    def f2(x, th, t):
        return np.array([(-x[1] - th[2] * x[0]) / th[0], (x[0] - x[1] / R) / th[1]])

    def f3(x, th, t):
        return np.array([0.0, -x[1] / R / th[1]])

    def fx12(x, th, t):
        return np.array([[-th[2] / th[0], -1.0 / th[0]], [1.0 / th[1], -1.0 / (R * th[1])]])

    def fx3(x, th, t):
        return np.array([[0.0, 0.0], [0.0, -1.0 / (R * th[1])]])

    def fp_factory(source):
        def fp(x, th, t):
            drive = source - x[1] - th[2] * x[0]
            return np.array([
                [-drive / th[0] ** 2, 0.0, -x[0] / th[0]],
                [0.0, -(x[0] - x[1] / R) / th[1] ** 2, 0.0],
            ])
        return fp

    def fp3(x, th, t):
        return np.array([[0.0, 0.0, 0.0], [0.0, x[1] / (R * th[1] ** 2), 0.0]])

    return (f1, fx12, fp_factory(a)), (f2, fx12, fp_factory(0.0)), (f3, fx3, fp3)


def buck_dcm_spec(params: BuckParams | None = None) -> HybridSystemSpec:
    """Three-mode DCM buck converter under hysteresis control.

    The q3 -> q1 transition (switch re-closes when ``v_C`` falls to ``v_lo``)
    completes the cycle.
    """
    params = params or BuckParams()
    (f1, fx1, fp1), (f2, fx2, fp2), (f3, fx3, fp3) = _fields(params)
    modes = [
        ModeSpec("q1", f1, state_jacobian=fx1, param_jacobian=fp1),
        ModeSpec("q2", f2, state_jacobian=fx2, param_jacobian=fp2),
        ModeSpec("q3", f3, state_jacobian=fx3, param_jacobian=fp3),
    ]
    v_hi, v_lo = params.v_hi, params.v_lo
    e2 = lambda x, th, t: np.array([0.0, 1.0])  # noqa: E731
    e1 = lambda x, th, t: np.array([1.0, 0.0])  # noqa: E731
    zero_p = lambda x, th, t: np.zeros(3)  # noqa: E731
    zero_t = lambda x, th, t: 0.0  # noqa: E731

    def hi_guard(x, th, t):
        return x[1] - v_hi

    def lo_guard(x, th, t):
        return x[1] - v_lo

    def zero_current(x, th, t):
        return x[0]

    common = dict(guard_param_gradient=zero_p, guard_time_derivative=zero_t)
    if params.reset == "printed":
        reset_kw = dict(
            reset=lambda x, th, t: np.array([0.0, x[1] * th[0]]),
            reset_state_jacobian=lambda x, th, t: np.array([[0.0, 0.0], [0.0, th[0]]]),
            reset_param_jacobian=lambda x, th, t: np.array([[0.0, 0.0, 0.0], [x[1], 0.0, 0.0]]),
            reset_time_derivative=lambda x, th, t: np.zeros(2),
        )
    else:
        reset_kw = {}
    transitions = [
        TransitionSpec("q1", "q2", hi_guard, "rising", guard_state_gradient=e2, name="q1->q2", **common),
        TransitionSpec("q2", "q1", lo_guard, "falling", guard_state_gradient=e2, name="q2->q1", **common),
        TransitionSpec("q2", "q3", zero_current, "falling", guard_state_gradient=e1, name="q2->q3",
                       **common, **reset_kw),
        TransitionSpec("q3", "q1", lo_guard, "falling", guard_state_gradient=e2, name="q3->q1", **common),
    ]
    return HybridSystemSpec(2, 3, modes, transitions, "q1", np.array(params.initial_state),
                            name="buck_dcm", state_names=STATE_NAMES, param_names=PARAM_NAMES)


def buck_averaged_rhs(params: BuckParams | None = None):
    """Duty-weighted average ``d1 f_q1 + d2 f_q2 + d3 f_q3`` and its Jacobians."""
    params = params or BuckParams()
    d1, d2, d3 = params.duties
    (f1, fx1, fp1), (f2, fx2, fp2), (f3, fx3, fp3) = _fields(params)

    def f(x, th, t):
        return d1 * f1(x, th, t) + d2 * f2(x, th, t) + d3 * f3(x, th, t)

    def fx(x, th, t):
        return d1 * fx1(x, th, t) + d2 * fx2(x, th, t) + d3 * fx3(x, th, t)

    def fp(x, th, t):
        return d1 * fp1(x, th, t) + d2 * fp2(x, th, t) + d3 * fp3(x, th, t)

    return f, fx, fp


def buck_averaged_spec(params: BuckParams | None = None) -> HybridSystemSpec:
    params = params or BuckParams()
    f, fx, fp = buck_averaged_rhs(params)
    return HybridSystemSpec(2, 3, [ModeSpec("avg", f, state_jacobian=fx, param_jacobian=fp)], [], "avg",
                            np.array(params.initial_state), name="buck_averaged",
                            state_names=STATE_NAMES, param_names=PARAM_NAMES)
