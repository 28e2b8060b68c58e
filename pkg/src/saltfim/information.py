"""Fisher information accumulation along hybrid arcs and identifiability metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from ._numdiff import numeric_jacobian
from ._validation import as_matrix, check_spd, check_symmetric
from .exceptions import NumericalError, ValidationError
from .hybrid import AlgebraicCache, HybridArc, HybridSystemSpec, IntegratorConfig
from .sensitivity import (
    JACOBIAN_SCALE,
    PropagationMode,
    SensitivityTrajectory,
    algebraic_sensitivities,
    propagate,
)

DEFAULT_EPSILON = 1e-14


# --------------------------------------------------------------------------- #
# measurement model


@dataclass
class OutputMap:
    """Measurement function ``h`` with optional analytic Jacobians.

    With ``uses_algebraic`` the evaluator signature is ``h(x, y, theta, t)``
    where ``y`` are the algebraic variables of the active mode; its total
    derivatives then include ``D_y h`` times the implicit algebraic
    sensitivities.

    Attributes:
        h: Output evaluator returning an ``m``-vector.
        n_outputs: Output dimension ``m``.
        state_jacobian: Optional ``D_x h`` (``m x n``).
        param_jacobian: Optional ``D_theta h`` (``m x p``).
        uses_algebraic: Whether ``h`` also reads the algebraic variables.
        names: Optional output labels.
    """

    h: Callable
    n_outputs: int
    state_jacobian: Callable | None = None
    param_jacobian: Callable | None = None
    uses_algebraic: bool = False
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if int(self.n_outputs) < 1:
            raise ValidationError("n_outputs must be positive")
        self.n_outputs = int(self.n_outputs)
        if self.names and len(self.names) != self.n_outputs:
            raise ValidationError("names must match n_outputs")
        self.names = tuple(self.names)

    def _algebraic(self, spec, q, x, theta, t, cache):
        if spec is None or q is None:
            raise ValidationError("outputs reading algebraic variables need the spec and mode")
        return algebraic_sensitivities(spec, q, x, theta, t, cache)

    def evaluate(self, x, theta, t: float, spec: HybridSystemSpec | None = None, q=None,
                 cache: AlgebraicCache | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if self.uses_algebraic:
            if spec is None or q is None:
                raise ValidationError("outputs reading algebraic variables need the spec and mode")
            y = (cache or AlgebraicCache()).solve(spec.mode(q), x, theta, t)
            val = self.h(x, y, theta, t)
        else:
            val = self.h(x, theta, t)
        val = np.atleast_1d(np.asarray(val, dtype=float))
        if val.shape != (self.n_outputs,):
            raise ValidationError(f"output has shape {val.shape}, expected ({self.n_outputs},)")
        return val

    def jacobians(self, x, theta, t: float, spec: HybridSystemSpec | None = None, q=None,
                  cache: AlgebraicCache | None = None, scale: float = JACOBIAN_SCALE):
        """Return ``(h, D_x h, D_theta h)`` as total derivatives."""
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        m, n, p = self.n_outputs, x.size, theta.size
        if not self.uses_algebraic:
            val = self.evaluate(x, theta, t)
            if self.state_jacobian is not None:
                hx = np.asarray(self.state_jacobian(x, theta, t), dtype=float)
            else:
                hx = numeric_jacobian(lambda xx: self.h(xx, theta, t), x, scale)
            if self.param_jacobian is not None:
                hp = np.asarray(self.param_jacobian(x, theta, t), dtype=float)
            else:
                hp = numeric_jacobian(lambda pp: self.h(x, pp, t), theta, scale)
            return val, _shaped(hx, (m, n), "D_x h"), _shaped(hp, (m, p), "D_theta h")
        y, dydx, dydp = self._algebraic(spec, q, x, theta, t, cache)
        k = y.size
        val = np.atleast_1d(np.asarray(self.h(x, y, theta, t), dtype=float))
        full = numeric_jacobian(lambda v: self.h(v[:n], v[n:n + k], v[n + k:], t),
                                np.concatenate([x, y, theta]), scale)
        hx, hy, hp = full[:, :n], full[:, n:n + k], full[:, n + k:]
        return val, hx + hy @ dydx, hp + hy @ dydp


def _shaped(arr, shape, name):
    arr = np.asarray(arr, dtype=float)
    if arr.size != shape[0] * shape[1]:
        raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr.reshape(shape)


def state_output(indices: Sequence[int], n_states: int, n_params: int,
                 names: Sequence[str] = ()) -> OutputMap:
    """Output map selecting a subset of the state vector."""
    idx = np.asarray(indices, dtype=int)
    if idx.ndim != 1 or idx.size == 0 or np.any(idx < 0) or np.any(idx >= n_states):
        raise ValidationError("invalid state indices")
    sel = np.zeros((idx.size, n_states))
    sel[np.arange(idx.size), idx] = 1.0
    zeros = np.zeros((idx.size, n_params))
    return OutputMap(
        h=lambda x, th, t: np.asarray(x, dtype=float)[idx],
        n_outputs=idx.size,
        state_jacobian=lambda x, th, t: sel,
        param_jacobian=lambda x, th, t: zeros,
        names=tuple(names),
    )



def select_outputs(out: OutputMap, names: Sequence[str]) -> OutputMap:
    """Restrict an output map to the named rows, in the given order."""
    if not out.names:
        raise ValidationError("output map has no names to select from")
    missing = [n for n in names if n not in out.names]
    if missing or not names:
        raise ValidationError(f"unknown outputs {missing}; available: {list(out.names)}")
    rows = np.array([out.names.index(n) for n in names])

    def pick(fn):
        if fn is None:
            return None
        return lambda *a: np.asarray(fn(*a), dtype=float).reshape(out.n_outputs, -1)[rows]

    return OutputMap(
        h=lambda *a: np.atleast_1d(np.asarray(out.h(*a), dtype=float))[rows],
        n_outputs=rows.size,
        state_jacobian=pick(out.state_jacobian),
        param_jacobian=pick(out.param_jacobian),
        uses_algebraic=out.uses_algebraic,
        names=tuple(names),
    )

_DEFAULT = object()


class NoiseModel:
    """Flow covariance ``V`` and optional per-event covariances ``V_j``.

    Args:
        V: Flow measurement covariance (``m x m`` or scalar for ``m = 1``).
        V_events: ``None`` disables post-event measurements; a single matrix
            applies to every event; a list gives one matrix per event (events
            beyond the list get no measurement). Omitted means ``V``.
    """

    def __init__(self, V, V_events=_DEFAULT):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        self.V = check_symmetric(V, "V")
        self._chol = check_spd(self.V, "V")
        self.m = self.V.shape[0]
        if V_events is _DEFAULT:
            self._events = "same"
            self._event_list = None
        elif V_events is None:
            self._events = "none"
            self._event_list = None
        else:
            arr = np.asarray(V_events, dtype=float)
            if arr.ndim <= 2:
                self._events = "shared"
                self._event_list = [self._checked(arr, "V_events")]
            else:
                self._events = "list"
                self._event_list = [self._checked(v, f"V_events[{i}]") for i, v in enumerate(arr)]

    def _checked(self, V, name):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if V.shape != (self.m, self.m):
            raise ValidationError(f"{name} must be {self.m}x{self.m}")
        V = check_symmetric(V, name)
        check_spd(V, name)
        return V

    @property
    def has_event_measurements(self) -> bool:
        return self._events != "none"

    def event_covariance(self, j: int):
        """Covariance of the measurement after event ``j`` or ``None``."""
        if self._events == "none":
            return None
        if self._events == "same":
            return self.V
        if self._events == "shared":
            return self._event_list[0]
        return self._event_list[j] if j < len(self._event_list) else None

    def scaled(self, factor: float) -> "NoiseModel":
        out = NoiseModel.__new__(NoiseModel)
        out.V = self.V * factor
        out._chol = self._chol * np.sqrt(factor)
        out.m = self.m
        out._events = self._events
        out._event_list = None if self._event_list is None else [v * factor for v in self._event_list]
        return out

    def lambda_floor(self, n_events: int) -> float:
        """``min`` of ``lambda_min(V^-1)`` and ``lambda_min(V_j^-1)`` over measured events."""
        vals = [1.0 / np.linalg.eigvalsh(self.V)[-1]]
        for j in range(n_events):
            Vj = self.event_covariance(j)
            if Vj is not None:
                vals.append(1.0 / np.linalg.eigvalsh(Vj)[-1])
        return float(min(vals))

    def to_dict(self) -> dict:
        d = {"V": self.V.tolist()}
        if self._events == "none":
            d["V_events"] = None
        elif self._events == "shared":
            d["V_events"] = self._event_list[0].tolist()
        elif self._events == "list":
            d["V_events"] = [v.tolist() for v in self._event_list]
        return d


def _whiten(chol, J):
    """``L^{-1} J`` for stacked ``J`` of shape ``(..., m, p)``."""
    J = np.asarray(J, dtype=float)
    if J.ndim == 2:
        return solve_triangular(chol, J, lower=True)
    N, m, p = J.shape
    flat = np.transpose(J, (1, 0, 2)).reshape(m, N * p)
    W = solve_triangular(chol, flat, lower=True)
    return np.transpose(W.reshape(m, N, p), (1, 0, 2))


def _sym(A):
    return 0.5 * (A + A.T)


# --------------------------------------------------------------------------- #
# elementary operations


def output_sensitivity(out: OutputMap, x, theta, t: float, Z, spec: HybridSystemSpec | None = None,
                       q=None, cache: AlgebraicCache | None = None) -> np.ndarray:
    """``J = D_x h Z + D_theta h``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (x.size, theta.size):
        raise ValidationError(f"Z has shape {Z.shape}, expected {(x.size, theta.size)}")
    _, hx, hp = out.jacobians(x, theta, t, spec, q, cache)
    return hx @ Z + hp


def trapezoid_weights(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValidationError("times must be a non-empty 1-D grid")
    if np.any(np.diff(times) < 0):
        raise ValidationError("times must be non-decreasing")
    w = np.zeros(times.size)
    if times.size > 1:
        dt = np.diff(times)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    return w


def flow_information(times, J, V) -> np.ndarray:
    """Composite trapezoid approximation of ``int J^T V^-1 J dt`` on the sample grid.

    Args:
        times: Sample times (N,) covering the interval, endpoints included.
        J: Output sensitivities (N, m, p); (N, p) is read as ``m = 1``.
        V: Measurement covariance (m, m) or scalar.
    """
    J = np.asarray(J, dtype=float)
    if J.ndim == 2:
        J = J[:, None, :]
    times = np.asarray(times, dtype=float)
    if J.ndim != 3 or J.shape[0] != times.size:
        raise ValidationError("J must have one (m, p) block per sample time")
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape != (J.shape[1], J.shape[1]):
        raise ValidationError("V does not match the output dimension")
    chol = check_spd(V, "V")
    w = trapezoid_weights(times)
    W = _whiten(chol, J) * np.sqrt(w)[:, None, None]
    flat = W.reshape(-1, J.shape[2])
    return _sym(flat.T @ flat)


@dataclass
class EventIncrement:
    """Information deformation at one event: ``Delta I = cross + quadratic``."""

    index: int
    time: float
    delta: np.ndarray
    cross: np.ndarray
    quadratic: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.delta))

    def to_dict(self) -> dict:
        return {"j": self.index, "time": self.time, "trace": self.trace, "delta": self.delta.tolist(),
                "cross_term": self.cross.tolist(), "quadratic_term": self.quadratic.tolist()}


def event_increment(J_minus, J_plus, V_j, index: int = 0, time: float = float("nan")) -> EventIncrement:
    """Split ``J+^T V^-1 J+ - J-^T V^-1 J-`` into cross and quadratic parts."""
    J_minus = np.atleast_2d(np.asarray(J_minus, dtype=float))
    J_plus = np.atleast_2d(np.asarray(J_plus, dtype=float))
    if J_minus.shape != J_plus.shape:
        raise ValidationError("J_minus and J_plus must have the same shape")
    V_j = np.atleast_2d(np.asarray(V_j, dtype=float))
    if V_j.shape != (J_minus.shape[0],) * 2:
        raise ValidationError("V_j does not match the output dimension")
    chol = check_spd(V_j, "V_j")
    dJ = J_plus - J_minus
    Vinv_dJ = cho_solve((chol, True), dJ)
    cross = 2.0 * _sym(J_minus.T @ Vinv_dJ)
    quadratic = _sym(dJ.T @ Vinv_dJ)
    Vinv_Jp = cho_solve((chol, True), J_plus)
    Vinv_Jm = cho_solve((chol, True), J_minus)
    delta = _sym(J_plus.T @ Vinv_Jp) - _sym(J_minus.T @ Vinv_Jm)
    return EventIncrement(index, float(time), delta, cross, quadratic)


def total_event_contribution(increments: Sequence[EventIncrement | np.ndarray], p: int | None = None) -> np.ndarray:
    mats = [inc.delta if isinstance(inc, EventIncrement) else np.asarray(inc, dtype=float) for inc in increments]
    if not mats:
        if p is None:
            return np.zeros((0, 0))
        return np.zeros((p, p))
    total = np.zeros_like(mats[0])
    for M in mats:
        total = total + M
    return total


# --------------------------------------------------------------------------- #
# metrics


@dataclass
class InfoMetrics:
    eigenvalues: np.ndarray
    rank: int
    lambda_min: float
    lambda_min_nonzero: float
    sigma: float
    logdet_regularized: float
    epsilon: float
    rank_threshold: float


def info_metrics(F, epsilon: float = DEFAULT_EPSILON, rank_tol: float | None = None) -> InfoMetrics:
    """Spectrum, numerical rank, ``sigma`` and ``log det(F + eps I)``.

    The rank counts eigenvalues above ``rank_tol * lambda_max`` (default
    ``p * machine eps``). ``sigma`` is the square root of the smallest
    eigenvalue and is zero whenever ``F`` is rank deficient.
    """
    F = check_symmetric(as_matrix(F, "F"), "F")
    p = F.shape[0]
    evals = np.linalg.eigvalsh(F)
    lam_max = max(float(evals[-1]), 0.0)
    tol = p * np.finfo(float).eps if rank_tol is None else float(rank_tol)
    threshold = tol * lam_max
    above = evals[evals > threshold]
    rank = int(above.size)
    lam_min = float(evals[0])
    lam_nz = float(above[0]) if rank else 0.0
    sigma = float(np.sqrt(max(lam_min, 0.0))) if rank == p else 0.0
    reg = F + float(epsilon) * np.eye(p)
    sign, logdet = np.linalg.slogdet(reg)
    if sign <= 0:
        logdet = -np.inf
    return InfoMetrics(evals, rank, lam_min, lam_nz, sigma, float(logdet), float(epsilon), float(threshold))


def least_observable_direction(F) -> tuple[np.ndarray, int]:
    """Unit eigenvector of the smallest eigenvalue and that eigenvalue's multiplicity.

    The sign is fixed so the largest-magnitude component is positive. A
    multiplicity above one means the returned vector is one element of a basis.
    """
    F = check_symmetric(as_matrix(F, "F"), "F")
    evals, evecs = np.linalg.eigh(F)
    scale = max(abs(evals[-1]), np.finfo(float).tiny)
    tol = 1e-10 * scale
    multiplicity = int(np.sum(evals - evals[0] <= tol))
    v = evecs[:, 0]
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return v, multiplicity


@dataclass
class ConditionalInformation:
    F: np.ndarray
    singular_complement: bool


def conditional_fim(F, index_a: Sequence[int]) -> ConditionalInformation:
    """Schur complement ``F_aa - F_ab F_bb^-1 F_ba``; a singular ``F_bb`` falls back to the pseudo-inverse."""
    F = check_symmetric(as_matrix(F, "F"), "F")
    p = F.shape[0]
    a = np.asarray(index_a, dtype=int)
    if a.ndim != 1 or a.size == 0 or np.any(a < 0) or np.any(a >= p) or len(set(a.tolist())) != a.size:
        raise ValidationError("invalid index set")
    b = np.array([i for i in range(p) if i not in set(a.tolist())], dtype=int)
    Faa = F[np.ix_(a, a)]
    if b.size == 0:
        return ConditionalInformation(Faa.copy(), False)
    Fab, Fbb = F[np.ix_(a, b)], F[np.ix_(b, b)]
    singular = False
    try:
        L = np.linalg.cholesky(Fbb)
        cond = np.linalg.cond(Fbb)
        if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
            raise np.linalg.LinAlgError
        S = Faa - Fab @ cho_solve((L, True), Fab.T)
    except np.linalg.LinAlgError:
        singular = True
        S = Faa - Fab @ np.linalg.pinv(Fbb, hermitian=True) @ Fab.T
    return ConditionalInformation(_sym(S), singular)


def crlb(F, epsilon: float = 0.0) -> np.ndarray:
    """Cramer-Rao bound ``(F + eps I)^-1``."""
    F = check_symmetric(as_matrix(F, "F"), "F")
    reg = F + float(epsilon) * np.eye(F.shape[0])
    try:
        L = np.linalg.cholesky(reg)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("information matrix is singular; no finite bound") from exc
    if np.linalg.cond(reg) > 1.0 / np.finfo(float).eps:
        raise NumericalError("information matrix is numerically singular")
    return _sym(cho_solve((L, True), np.eye(F.shape[0])))


# --------------------------------------------------------------------------- #
# HPE


@dataclass
class HpeWindow:
    t0: float
    mu_t: float
    j0: int
    mu_j: int
    G: np.ndarray
    alpha: float

    def to_dict(self) -> dict:
        return {"t0": self.t0, "mu_t": self.mu_t, "j0": self.j0, "mu_j": self.mu_j,
                "G": self.G.tolist(), "alpha": self.alpha}


def hpe_gramian(times, J, jump_J: Sequence = (), t0: float | None = None, mu_t: float | None = None,
                j0: int = 0) -> HpeWindow:
    """Hybrid regressor Gramian ``int J^T J dt + sum_k J_k^T J_k`` over a window.

    Args:
        times: Flow sample times; may be empty when only jumps contribute.
        J: Flow output sensitivities (N, m, p).
        jump_J: Post-event output sensitivities inside the window.
        t0, mu_t: Window start and length; default to the sample span.
        j0: Index of the first jump in the window.
    """
    times = np.asarray(times, dtype=float).ravel()
    jumps = [np.atleast_2d(np.asarray(Jk, dtype=float)) for Jk in jump_J]
    if times.size == 0 and not jumps:
        raise ValidationError("empty HPE window")
    J = np.asarray(J, dtype=float)
    if times.size:
        if J.ndim == 2:
            J = J[:, None, :]
        p = J.shape[2]
        w = trapezoid_weights(times)
        W = J * np.sqrt(w)[:, None, None]
        flat = W.reshape(-1, p)
        G = flat.T @ flat
    else:
        p = jumps[0].shape[1]
        G = np.zeros((p, p))
    for Jk in jumps:
        G = G + Jk.T @ Jk
    G = _sym(G)
    start = float(times[0]) if times.size and t0 is None else float(t0 or 0.0)
    length = float(times[-1] - times[0]) if times.size and mu_t is None else float(mu_t or 0.0)
    alpha = float(np.linalg.eigvalsh(G)[0])
    return HpeWindow(start, length, int(j0), len(jumps), G, alpha)


@dataclass
class HpeCertificate:
    holds: bool
    alpha: float
    lambda_floor: float
    lambda_bar: float

    def to_dict(self) -> dict:
        return {"holds": self.holds, "alpha": self.alpha, "lambda_floor": self.lambda_floor,
                "lambda_bar": self.lambda_bar}


def hpe_certificate(windows: Sequence[HpeWindow], noise: NoiseModel, n_events: int = 0) -> HpeCertificate:
    """``alpha = min_w lambda_min(G_w)``; floor ``lambda_bar * alpha`` with ``lambda_bar`` from the covariances."""
    if not windows:
        raise ValidationError("at least one window is required")
    alpha = float(min(w.alpha for w in windows))
    lam_bar = noise.lambda_floor(n_events)
    holds = alpha > 0
    return HpeCertificate(bool(holds), alpha, lam_bar * alpha if holds else 0.0, lam_bar)


# --------------------------------------------------------------------------- #
# accumulation along an arc


@dataclass
class OutputSamples:
    """Output sensitivities sampled along an arc: per segment flow blocks plus event blocks."""

    segment_times: list[np.ndarray]
    segment_J: list[np.ndarray]
    event_times: np.ndarray
    J_minus: list[np.ndarray]
    J_plus: list[np.ndarray]


def sample_output_sensitivities(arc: HybridArc, sens: SensitivityTrajectory, out: OutputMap,
                                spec: HybridSystemSpec | None = None, cache: AlgebraicCache | None = None
                                ) -> OutputSamples:
    """Evaluate ``J`` on every accepted grid point and on both sides of each event."""
    theta = np.asarray(arc.theta, dtype=float)
    cache = cache or AlgebraicCache()
    seg_times, seg_J = [], []
    for seg in sens.segments:
        Js = np.array([output_sensitivity(out, x, theta, t, Z, spec, seg.mode, cache)
                       for t, x, Z in zip(seg.grid, seg.states, seg.Z)])
        seg_times.append(np.asarray(seg.grid, dtype=float))
        seg_J.append(Js)
    J_minus, J_plus = [], []
    for k, (event, jump) in enumerate(zip(arc.events, sens.jumps)):
        if _same_output_point(spec, out, event):
            # one Jacobian evaluation keeps J+ - J- = D_x h (Z+ - Z-) free of differencing noise
            _, hx, hp = out.jacobians(event.pre_state, theta, event.time, spec, event.source, cache)
            J_minus.append(hx @ jump.Z_pre + hp)
            J_plus.append(hx @ jump.Z_post + hp)
            continue
        J_minus.append(output_sensitivity(out, event.pre_state, theta, event.time, jump.Z_pre, spec,
                                          event.source, cache))
        J_plus.append(output_sensitivity(out, event.post_state, theta, event.time, jump.Z_post, spec,
                                         event.target, cache))
    return OutputSamples(seg_times, seg_J, np.asarray(arc.event_times, dtype=float), J_minus, J_plus)


def _same_output_point(spec, out: OutputMap, event) -> bool:
    if not np.array_equal(event.pre_state, event.post_state):
        return False
    if not out.uses_algebraic:
        return True
    return spec is not None and spec.mode(event.source).algebraic is spec.mode(event.target).algebraic


@dataclass
class InformationReport:
    """Accumulated information matrix with its diagnostics.

    ``flow`` and ``jumps`` hold the two additive parts of ``F``.
    """

    F: np.ndarray
    flow: np.ndarray
    jumps: np.ndarray
    propagation_mode: str
    rank: int
    eigenvalues: np.ndarray
    lambda_min: float
    lambda_min_nonzero: float
    sigma: float
    logdet_regularized: float
    epsilon: float
    weakest_direction: np.ndarray
    weakest_multiplicity: int
    event_increments: list[EventIncrement] = field(default_factory=list)
    param_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "propagation_mode": self.propagation_mode,
            "param_names": list(self.param_names),
            "F": self.F.tolist(),
            "flow": self.flow.tolist(),
            "jumps": self.jumps.tolist(),
            "rank": self.rank,
            "eigenvalues": self.eigenvalues.tolist(),
            "lambda_min": self.lambda_min,
            "lambda_min_nonzero": self.lambda_min_nonzero,
            "sigma": self.sigma,
            "logdet_regularized": self.logdet_regularized,
            "epsilon": self.epsilon,
            "weakest_direction": self.weakest_direction.tolist(),
            "weakest_multiplicity": self.weakest_multiplicity,
            "event_increments": [inc.to_dict() for inc in self.event_increments],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_report(F, flow=None, jumps=None, propagation_mode: str = "saltation",
                 increments: Sequence[EventIncrement] = (), epsilon: float = DEFAULT_EPSILON,
                 rank_tol: float | None = None, param_names: Sequence[str] = ()) -> InformationReport:
    F = _sym(as_matrix(F, "F"))
    met = info_metrics(F, epsilon, rank_tol)
    v, mult = least_observable_direction(F)
    zeros = np.zeros_like(F)
    return InformationReport(
        F=F, flow=F if flow is None else flow, jumps=zeros if jumps is None else jumps,
        propagation_mode=str(propagation_mode), rank=met.rank, eigenvalues=met.eigenvalues,
        lambda_min=met.lambda_min, lambda_min_nonzero=met.lambda_min_nonzero, sigma=met.sigma,
        logdet_regularized=met.logdet_regularized, epsilon=met.epsilon, weakest_direction=v,
        weakest_multiplicity=mult, event_increments=list(increments), param_names=tuple(param_names),
    )


@dataclass
class InformationSeries:
    """Cumulative information ``F(t)`` at every flow sample and right after each jump."""

    times: np.ndarray
    F: np.ndarray

    def metrics(self, epsilon: float = DEFAULT_EPSILON, rank_tol: float | None = None) -> list[InfoMetrics]:
        return [info_metrics(Fk, epsilon, rank_tol) for Fk in self.F]

    def to_csv(self, epsilon: float = DEFAULT_EPSILON, rank_tol: float | None = None) -> str:
        p = self.F.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"lambda_{i + 1}" for i in range(p)] + ["logdet", "rank"])
        for t, met in zip(self.times, self.metrics(epsilon, rank_tol)):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in met.eigenvalues]
                            + [repr(met.logdet_regularized), met.rank])
        return buf.getvalue()


def accumulate_information(samples: OutputSamples, noise: NoiseModel, include_jumps: bool = True,
                           record_series: bool = False):
    """Sum flow quadrature and post-event jump terms in segment order.

    Returns ``(flow, jumps, increments, series)``; ``series`` is ``None``
    unless requested.
    """
    p = samples.segment_J[0].shape[-1]
    chol = noise._chol
    flow = np.zeros((p, p))
    jumps = np.zeros((p, p))
    increments: list[EventIncrement] = []
    s_times, s_F = [], []
    n_seg = len(samples.segment_times)
    for k in range(n_seg):
        times, J = samples.segment_times[k], samples.segment_J[k]
        if J.ndim == 2:
            J = J[:, None, :]
        W = _whiten(chol, J)
        if record_series:
            # cumulative trapezoid within the segment
            outer = np.einsum("nmi,nmj->nij", W, W)
            dt = np.diff(times)
            cum = np.zeros((times.size, p, p))
            if times.size > 1:
                cum[1:] = np.cumsum(0.5 * dt[:, None, None] * (outer[1:] + outer[:-1]), axis=0)
            for t, C in zip(times, cum):
                s_times.append(float(t))
                s_F.append(_sym(flow + jumps + C))
        seg_flow = flow_information(times, J, noise.V) if times.size > 1 else np.zeros((p, p))
        flow = flow + seg_flow
        if k < len(samples.J_plus):
            Vj = noise.event_covariance(k)
            if Vj is not None:
                inc = event_increment(samples.J_minus[k], samples.J_plus[k], Vj, k, samples.event_times[k])
                increments.append(inc)
                if include_jumps:
                    Lj = np.linalg.cholesky(Vj)
                    Wp = solve_triangular(Lj, samples.J_plus[k], lower=True)
                    jumps = jumps + _sym(Wp.T @ Wp)
                    if record_series:
                        s_times.append(float(samples.event_times[k]))
                        s_F.append(_sym(flow + jumps))
    series = InformationSeries(np.array(s_times), np.array(s_F)) if record_series else None
    return _sym(flow), _sym(jumps), increments, series


def fisher_information(arc: HybridArc, sens: SensitivityTrajectory, out: OutputMap, noise: NoiseModel,
                       spec: HybridSystemSpec | None = None, include_jumps: bool | None = None,
                       epsilon: float = DEFAULT_EPSILON, rank_tol: float | None = None,
                       record_series: bool = False):
    """Information report for precomputed sensitivities.

    Jump terms are included unless the sensitivities ignore events. Returns
    ``(report, series)`` when ``record_series`` is set, else the report.
    """
    mode = PropagationMode.parse(sens.propagation_mode)
    if out.n_outputs != noise.m:
        raise ValidationError("noise dimension does not match the output map")
    if include_jumps is None:
        include_jumps = mode is not PropagationMode.SMOOTH
    samples = sample_output_sensitivities(arc, sens, out, spec)
    flow, jumps, increments, series = accumulate_information(samples, noise, include_jumps, record_series)
    names = tuple(spec.param_names) if spec is not None and spec.param_names else ()
    report = build_report(flow + jumps, flow, jumps, mode.value, increments, epsilon, rank_tol, names)
    return (report, series) if record_series else report


def salted_fim(arc: HybridArc, sensitivities: SensitivityTrajectory, out: OutputMap, noise: NoiseModel,
               spec: HybridSystemSpec | None = None, **kwargs):
    """Salted Fisher information: flow quadrature plus ``J(tau+)^T V_j^-1 J(tau+)`` per measured event."""
    if PropagationMode.parse(sensitivities.propagation_mode) is not PropagationMode.SALTATION:
        raise ValidationError("salted_fim needs sensitivities propagated in saltation mode")
    return fisher_information(arc, sensitivities, out, noise, spec, include_jumps=True, **kwargs)


def _fim_for_mode(mode, arc, spec, out, noise, sensitivities, config, **kwargs):
    if sensitivities is None:
        sensitivities = propagate(arc, spec, arc.theta, mode=mode, config=config)
    elif PropagationMode.parse(sensitivities.propagation_mode) is not mode:
        raise ValidationError(f"sensitivities must be propagated in {mode.value} mode")
    return fisher_information(arc, sensitivities, out, noise, spec,
                              include_jumps=mode is not PropagationMode.SMOOTH, **kwargs)


def smooth_fim(arc: HybridArc, spec: HybridSystemSpec, out: OutputMap, noise: NoiseModel,
               sensitivities: SensitivityTrajectory | None = None, config: IntegratorConfig | None = None,
               **kwargs):
    """Information with sensitivities carried through events unchanged and no jump terms."""
    return _fim_for_mode(PropagationMode.SMOOTH, arc, spec, out, noise, sensitivities, config, **kwargs)


def reset_jacobian_fim(arc: HybridArc, spec: HybridSystemSpec, out: OutputMap, noise: NoiseModel,
                       sensitivities: SensitivityTrajectory | None = None,
                       config: IntegratorConfig | None = None, **kwargs):
    """Information with sensitivities mapped by ``D_x R`` only at events."""
    return _fim_for_mode(PropagationMode.RESET_JACOBIAN, arc, spec, out, noise, sensitivities, config,
                         **kwargs)


def arc_hpe_windows(samples: OutputSamples, noise: NoiseModel | None = None, mu_t: float | None = None,
                    mu_j: int | None = None) -> list[HpeWindow]:
    """HPE windows over an arc; a single full-horizon window unless ``mu_t`` is given.

    Sliding windows start at each segment start and span ``mu_t`` seconds of
    flow; ``mu_j`` caps the number of jumps counted per window.
    """
    times = np.concatenate(samples.segment_times)
    J = np.concatenate([j if j.ndim == 3 else j[:, None, :] for j in samples.segment_J])
    seg_id = np.concatenate([np.full(t.size, k) for k, t in enumerate(samples.segment_times)])
    measured = [k for k in range(len(samples.J_plus))
                if noise is None or noise.event_covariance(k) is not None]
    if mu_t is None:
        return [_window(times, J, seg_id, samples, measured, times[0], times[-1], 0, mu_j)]
    out = []
    starts = [t[0] for t in samples.segment_times]
    for s in starts:
        if s + mu_t > times[-1] + 1e-12:
            break
        j0 = int(np.searchsorted(samples.event_times, s, side="left"))
        out.append(_window(times, J, seg_id, samples, measured, s, s + mu_t, j0, mu_j))
    if not out:
        raise ValidationError("window length exceeds the horizon")
    return out


def _window(times, J, seg_id, samples, measured, t0, t1, j0, mu_j):
    G = None
    flows = []
    for k in np.unique(seg_id):
        mask = (seg_id == k) & (times >= t0 - 1e-15) & (times <= t1 + 1e-15)
        if np.count_nonzero(mask) > 1:
            flows.append(hpe_gramian(times[mask], J[mask]).G)
    jump_list = [samples.J_plus[k] for k in measured if t0 <= samples.event_times[k] <= t1]
    if mu_j is not None:
        jump_list = jump_list[:mu_j]
    p = J.shape[2]
    G = np.zeros((p, p))
    for Gk in flows:
        G = G + Gk
    for Jk in jump_list:
        G = G + Jk.T @ Jk
    G = _sym(G)
    return HpeWindow(float(t0), float(t1 - t0), int(j0), len(jump_list), G, float(np.linalg.eigvalsh(G)[0]))
