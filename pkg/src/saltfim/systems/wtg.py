"""Three-bus network with a flux-decay synchronous generator and a pitch-controlled wind turbine.

Differential states ``X = (E'_q, delta, omega, T_m, E_fd, z, xi, beta)``;
algebraic variables ``y = (I_d, I_q, V1, th1, V2, th2, V3, th3)``;
estimated parameters ``theta = (M_r, kappa, k_p, k_i, T_beta, M, T_E)``.
Bus 1 holds the generator, bus 2 the turbine at unity power factor and bus 3
a constant-power load; lines are lossless.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.optimize import root

from ..exceptions import AlgebraicSolveError, ValidationError
from ..hybrid import AlgebraicLayer, HybridSystemSpec, ModeSpec, TransitionSpec
from ..information import OutputMap

STATE_NAMES = ("Eq_prime", "delta", "omega", "T_m", "E_fd", "z", "xi", "beta")
ALG_NAMES = ("I_d", "I_q", "V1", "th1", "V2", "th2", "V3", "th3")
PARAM_NAMES = ("M_r", "kappa", "k_p", "k_i", "T_beta", "M", "T_E")
OUTPUT_NAMES = ("E_fd", "V1", "delta", "P_ele")
CP_COEFFS = (0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068)
OMEGA_S = 2.0 * np.pi * 60.0

IX = {name: i for i, name in enumerate(STATE_NAMES)}
IP = {name: i for i, name in enumerate(PARAM_NAMES)}


@dataclass(frozen=True)
class WtgParams:
    """Model constants; the seven estimated parameters are listed first.

    Per-unit quantities on the system base; ``omega`` in rad/s, ``beta`` in
    degrees. ``M`` is the generator inertia ``2H / omega_s``.
    """

    # estimated
    M_r: float = 36.0
    kappa: float = 0.62
    k_p: float = 150.0
    k_i: float = 200.0
    T_beta: float = 0.1
    M: float = 2.0 * 6.4 / OMEGA_S
    T_E: float = 0.2
    # generator
    T_d0: float = 6.0
    X_d: float = 0.8958
    X_d_prime: float = 0.1198
    X_q: float = 0.8645
    D: float = 0.05
    T_SV: float = 0.2
    R_D: float = 0.05
    K_A: float = 20.0
    # turbine
    B: float = 2.149
    C: float = 1.0
    zeta: float = 8.1
    cp_coeffs: tuple[float, ...] = CP_COEFFS
    # pitch / guards
    z_star: float = 0.9454
    p_star: float = 0.2889
    # network
    Y_12: float = 0.0
    Y_13: float = 10.0
    Y_23: float = 10.0
    P_L: float = 1.0
    Q_L: float = 0.3
    V1_set: float = 1.0
    # wind (m/s); turbine equations use gamma / wind_base
    r: float = 12.0
    s: float = 1.2
    wind_base: float = 12.0
    # initial pitch-controller states
    xi0: float = 0.01
    beta0: float = 2.5

    def __post_init__(self):
        positive = ("M_r", "kappa", "T_beta", "M", "T_E", "T_d0", "X_d", "X_d_prime", "X_q", "T_SV",
                    "R_D", "K_A", "B", "C", "zeta", "z_star", "p_star", "V1_set", "r", "wind_base")
        for name in positive:
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive")
        if not (0 <= self.s < self.r):
            raise ValidationError("wind amplitude must satisfy 0 <= s < r")
        if min(self.Y_12, self.Y_13, self.Y_23, self.D) < 0:
            raise ValidationError("admittances and damping must be non-negative")
        if len(self.cp_coeffs) != 6:
            raise ValidationError("cp_coeffs needs six entries")
        object.__setattr__(self, "cp_coeffs", tuple(float(c) for c in self.cp_coeffs))

    @property
    def theta(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cp_coeffs"] = list(self.cp_coeffs)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "WtgParams":
        """Accept a flat map or one grouped by ``generator``/``turbine``/``pitch``/... sections."""
        known = {f.name for f in fields(cls)}
        flat = {}
        for key, value in data.items():
            if isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        unknown = set(flat) - known
        if unknown:
            raise ValidationError(f"unknown WTG parameters: {sorted(unknown)}")
        if "cp_coeffs" in flat:
            flat["cp_coeffs"] = tuple(flat["cp_coeffs"])
        return cls(**flat)


def wind_profile(r: float, s: float):
    """``gamma(t) = r + s sin(100 pi t)`` with its time derivative attached as ``.derivative``."""
    r, s = float(r), float(s)
    if not (r > s >= 0):
        raise ValidationError("wind profile needs r > s >= 0")
    w = 100.0 * np.pi

    def gamma(t):
        return r + s * np.sin(w * t)

    gamma.derivative = lambda t: s * w * np.cos(w * t)
    gamma.period = 2.0 * np.pi / w
    return gamma


def power_coefficient(zeta: float, beta: float, coeffs=CP_COEFFS) -> tuple[float, float]:
    """``C_p(zeta, beta)`` and ``dC_p/dbeta`` for the exponential power-coefficient form."""
    c1, c2, c3, c4, c5, c6 = coeffs
    a = zeta + 0.08 * beta
    b = beta ** 3 + 1.0
    u = 1.0 / a - 0.035 / b
    du = -0.08 / a ** 2 + 0.105 * beta ** 2 / b ** 2
    inner = c2 * u - c3 * beta - c4
    e = np.exp(-c5 * u)
    cp = c1 * inner * e + c6 * zeta
    dcp = c1 * e * ((c2 * du - c3) - c5 * du * inner)
    return float(cp), float(dcp)


class WtgModel:
    """Evaluators for the WTG DAE; shared by both guard variants."""

    def __init__(self, params: WtgParams):
        self.params = params
        self.wind = wind_profile(params.r, params.s)

    def gamma(self, t) -> float:
        """Wind speed in per-unit of ``wind_base``."""
        return self.wind(t) / self.params.wind_base

    def gamma_dot(self, t) -> float:
        return self.wind.derivative(t) / self.params.wind_base

    # turbine -------------------------------------------------------------
    def p_ele(self, x, th, t) -> float:
        cp, _ = power_coefficient(self.params.zeta, x[7], self.params.cp_coeffs)
        return th[1] * cp * self.gamma(t) ** 3

    def p_ele_gradients(self, x, th, t):
        cp, dcp = power_coefficient(self.params.zeta, x[7], self.params.cp_coeffs)
        g = self.gamma(t)
        gx = np.zeros(8)
        gx[7] = th[1] * dcp * g ** 3
        gp = np.zeros(7)
        gp[1] = cp * g ** 3
        gt = 3.0 * th[1] * cp * g ** 2 * self.gamma_dot(t)
        return gx, gp, float(gt)

    # network -------------------------------------------------------------
    def residual(self, x, y, th, t) -> np.ndarray:
        P = self.params
        Eq, delta = x[0], x[1]
        Id, Iq, V1, a1, V2, a2, V3, a3 = y
        Pe = self.p_ele(x, th, t)
        s1d, c1d = np.sin(delta - a1), np.cos(delta - a1)
        PG = Id * V1 * s1d + Iq * V1 * c1d
        QG = Id * V1 * c1d - Iq * V1 * s1d

        def p_line(Vi, Vk, ai, ak, Y):
            return Y * Vi * Vk * np.sin(ai - ak)

        def q_line(Vi, Vk, ai, ak, Y):
            return Y * (Vi * Vi - Vi * Vk * np.cos(ai - ak))

        return np.array([
            P.X_d_prime * Id - Eq + V1 * np.cos(a1 - delta),
            P.X_q * Iq + V1 * np.sin(a1 - delta),
            PG - p_line(V1, V2, a1, a2, P.Y_12) - p_line(V1, V3, a1, a3, P.Y_13),
            QG - q_line(V1, V2, a1, a2, P.Y_12) - q_line(V1, V3, a1, a3, P.Y_13),
            Pe - p_line(V2, V1, a2, a1, P.Y_12) - p_line(V2, V3, a2, a3, P.Y_23),
            -q_line(V2, V1, a2, a1, P.Y_12) - q_line(V2, V3, a2, a3, P.Y_23),
            -P.P_L - p_line(V3, V1, a3, a1, P.Y_13) - p_line(V3, V2, a3, a2, P.Y_23),
            -P.Q_L - q_line(V3, V1, a3, a1, P.Y_13) - q_line(V3, V2, a3, a2, P.Y_23),
        ])

    def residual_jacobian(self, x, y, th, t) -> np.ndarray:
        """Analytic ``dc/dy``."""
        P = self.params
        delta = x[1]
        Id, Iq, V1, a1, V2, a2, V3, a3 = y
        s1d, c1d = np.sin(delta - a1), np.cos(delta - a1)
        Jc = np.zeros((8, 8))
        # stator
        Jc[0, 0] = P.X_d_prime
        Jc[0, 2] = np.cos(a1 - delta)
        Jc[0, 3] = -V1 * np.sin(a1 - delta)
        Jc[1, 1] = P.X_q
        Jc[1, 2] = np.sin(a1 - delta)
        Jc[1, 3] = V1 * np.cos(a1 - delta)

        def line(i_row_p, i_row_q, Vi, Vk, ai, ak, Y, iV, ia, kV, ka):
            # P_ik = Y Vi Vk sin(ai-ak), Q_ik = Y (Vi^2 - Vi Vk cos(ai-ak)); residual subtracts both
            s, c = np.sin(ai - ak), np.cos(ai - ak)
            Jc[i_row_p, iV] -= Y * Vk * s
            Jc[i_row_p, kV] -= Y * Vi * s
            Jc[i_row_p, ia] -= Y * Vi * Vk * c
            Jc[i_row_p, ka] += Y * Vi * Vk * c
            Jc[i_row_q, iV] -= Y * (2 * Vi - Vk * c)
            Jc[i_row_q, kV] -= -Y * Vi * c
            Jc[i_row_q, ia] -= Y * Vi * Vk * s
            Jc[i_row_q, ka] += Y * Vi * Vk * s

        # generator injection
        Jc[2, 0] = V1 * s1d
        Jc[2, 1] = V1 * c1d
        Jc[2, 2] = Id * s1d + Iq * c1d
        Jc[2, 3] = -Id * V1 * c1d + Iq * V1 * s1d
        Jc[3, 0] = V1 * c1d
        Jc[3, 1] = -V1 * s1d
        Jc[3, 2] = Id * c1d - Iq * s1d
        Jc[3, 3] = Id * V1 * s1d + Iq * V1 * c1d
        iV1, ia1, iV2, ia2, iV3, ia3 = 2, 3, 4, 5, 6, 7
        line(2, 3, V1, V2, a1, a2, P.Y_12, iV1, ia1, iV2, ia2)
        line(2, 3, V1, V3, a1, a3, P.Y_13, iV1, ia1, iV3, ia3)
        line(4, 5, V2, V1, a2, a1, P.Y_12, iV2, ia2, iV1, ia1)
        line(4, 5, V2, V3, a2, a3, P.Y_23, iV2, ia2, iV3, ia3)
        line(6, 7, V3, V1, a3, a1, P.Y_13, iV3, ia3, iV1, ia1)
        line(6, 7, V3, V2, a3, a2, P.Y_23, iV3, ia3, iV2, ia2)
        return Jc

    # differential part ----------------------------------------------------
    def dynamics(self, x, y, th, t, pitch_active: bool, P_c: float, V_ref: float) -> np.ndarray:
        P = self.params
        Eq, delta, omega, Tm, Efd, z, xi, beta = x
        Id, Iq, V1 = y[0], y[1], y[2]
        M_r, _, k_p, k_i, T_beta, M, T_E = th
        cp, _ = power_coefficient(P.zeta, beta, P.cp_coeffs)
        g3 = self.gamma(t) ** 3
        dz = OMEGA_S / M_r * (P.B * cp * g3 / z - P.C * z * z)
        out = np.array([
            (-Eq - (P.X_d - P.X_d_prime) * Id + Efd) / P.T_d0,
            omega - OMEGA_S,
            (Tm - Eq * Iq - (P.X_q - P.X_d_prime) * Id * Iq - P.D * (omega - OMEGA_S)) / M,
            (-Tm + P_c - (omega / OMEGA_S - 1.0) / P.R_D) / P.T_SV,
            (-Efd + P.K_A * (V_ref - V1)) / T_E,
            dz,
            0.0,
            0.0,
        ])
        if pitch_active:
            err = z - P.z_star
            out[6] = err
            out[7] = (k_p * err + k_i * xi - beta) / T_beta
        return out


@dataclass(frozen=True)
class WtgEquilibrium:
    state: np.ndarray
    algebraic: np.ndarray
    P_c: float
    V_ref: float


def wtg_equilibrium(params: WtgParams) -> WtgEquilibrium:
    """Power-flow equilibrium at ``t = 0`` with ``V1 = V1_set`` and ``th1 = 0``.

    Generator states sit at rest (``omega = omega_s``), the rotor speed solves
    ``dz/dt = 0`` for the initial pitch and ``P_c``, ``V_ref`` close the
    governor and exciter loops.
    """
    P = params
    model = WtgModel(P)
    th = P.theta
    cp, _ = power_coefficient(P.zeta, P.beta0, P.cp_coeffs)
    z0 = (P.B * cp * model.gamma(0.0) ** 3 / P.C) ** (1.0 / 3.0)
    V1, a1 = P.V1_set, 0.0
    dXd = P.X_d - P.X_d_prime

    def unpack(u):
        Eq, delta, Id, Iq, V2, a2, V3, a3 = u
        Efd = Eq + dXd * Id
        x = np.array([Eq, delta, OMEGA_S, 0.0, Efd, z0, P.xi0, P.beta0])
        y = np.array([Id, Iq, V1, a1, V2, a2, V3, a3])
        return x, y

    def eqs(u):
        x, y = unpack(u)
        return model.residual(x, y, th, 0.0)

    guess = np.array([1.1, 0.5, 0.5, 0.5, 1.0, 0.0, 1.0, -0.1])
    sol = root(eqs, guess, method="hybr", options={"xtol": 1e-14})
    if np.linalg.norm(eqs(sol.x)) > 1e-10:
        raise AlgebraicSolveError(f"WTG equilibrium initialization failed: {sol.message}")
    x, y = unpack(sol.x)
    Id, Iq = y[0], y[1]
    Tm = x[0] * Iq + (P.X_q - P.X_d_prime) * Id * Iq
    x[3] = Tm
    V_ref = V1 + x[4] / P.K_A
    return WtgEquilibrium(x, y, float(Tm), float(V_ref))


GUARD_KINDS = ("rotor_speed", "power")


def wtg_spec(params: WtgParams | None = None, guard_kind: str = "rotor_speed") -> HybridSystemSpec:
    """Hybrid DAE with pitch-inactive ``q1`` and pitch-active ``q2``.

    ``guard_kind="rotor_speed"`` switches on ``z - z*``; ``"power"`` on
    ``P_ele - P*``. Both transitions use identity resets, rising into ``q2``
    and falling back to ``q1``.
    """
    params = params or WtgParams()
    if guard_kind not in GUARD_KINDS:
        raise ValidationError(f"guard_kind must be one of {GUARD_KINDS}")
    model = WtgModel(params)
    eq = wtg_equilibrium(params)
    layer = AlgebraicLayer(8, model.residual, eq.algebraic.copy(), model.residual_jacobian)
    P_c, V_ref = eq.P_c, eq.V_ref

    def f1(x, y, th, t):
        return model.dynamics(x, y, th, t, False, P_c, V_ref)

    def f2(x, y, th, t):
        return model.dynamics(x, y, th, t, True, P_c, V_ref)

    modes = [ModeSpec("q1", f1, algebraic=layer), ModeSpec("q2", f2, algebraic=layer)]
    if guard_kind == "rotor_speed":
        z_star = params.z_star
        ez = np.zeros(8)
        ez[IX["z"]] = 1.0
        kw = dict(
            guard=lambda x, th, t: x[5] - z_star,
            guard_state_gradient=lambda x, th, t: ez,
            guard_param_gradient=lambda x, th, t: np.zeros(7),
            guard_time_derivative=lambda x, th, t: 0.0,
        )
    else:
        p_star = params.p_star
        kw = dict(
            guard=lambda x, th, t: model.p_ele(x, th, t) - p_star,
            guard_state_gradient=lambda x, th, t: model.p_ele_gradients(x, th, t)[0],
            guard_param_gradient=lambda x, th, t: model.p_ele_gradients(x, th, t)[1],
            guard_time_derivative=lambda x, th, t: model.p_ele_gradients(x, th, t)[2],
        )
    transitions = [
        TransitionSpec("q1", "q2", guard_direction="rising", name="q1->q2", **kw),
        TransitionSpec("q2", "q1", guard_direction="falling", name="q2->q1", **kw),
    ]
    spec = HybridSystemSpec(8, 7, modes, transitions, "q1", eq.state.copy(),
                            name=f"wtg_{'z' if guard_kind == 'rotor_speed' else 'power'}_guard",
                            state_names=STATE_NAMES, param_names=PARAM_NAMES)
    return spec


def wtg_output_map(params: WtgParams | None = None) -> OutputMap:
    """Measured signals ``(E_fd, V1, delta, P_ele)``; ``V1`` is algebraic."""
    model = WtgModel(params or WtgParams())

    def h(x, y, th, t):
        return np.array([x[4], y[2], x[1], model.p_ele(x, th, t)])

    return OutputMap(h, 4, uses_algebraic=True, names=OUTPUT_NAMES)
