"""Hybrid system data model and execution.

A hybrid system is a set of modes with their own vector fields, joined by
transitions that fire when a scalar guard function crosses zero. Within a
mode the state is advanced by an adaptive Dormand-Prince 5(4) integrator
with dense output; guard crossings are localized on the dense output and
the transition's reset map is applied. Modes may carry an index-1 algebraic
layer that is eliminated by Newton iteration at every right-hand-side
evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.integrate import RK45

from ._numdiff import numeric_derivative, numeric_jacobian
from ._validation import as_vector, check_positive
from .exceptions import (
    AlgebraicSolveError,
    AmbiguousEventError,
    GrazingError,
    IntegrationError,
    NoCrossingError,
    NumericalError,
    ValidationError,
    ZenoError,
)

logger = logging.getLogger(__name__)

ModeId = Hashable


class GuardDirection(str, Enum):
    RISING = "rising"
    FALLING = "falling"
    EITHER = "either"


@dataclass(frozen=True)
class AlgebraicLayer:
    """Algebraic constraints ``c(x, y, theta, t) = 0`` solved for ``y``.

    ``residual_jacobian`` optionally returns ``dc/dy``; otherwise it is
    obtained by central differences.
    """

    n_alg: int
    residual: Callable
    initial_guess: np.ndarray
    residual_jacobian: Callable | None = None

    def __post_init__(self):
        guess = as_vector(self.initial_guess, "initial_guess", self.n_alg)
        object.__setattr__(self, "initial_guess", guess)


@dataclass(frozen=True)
class ModeSpec:
    """One discrete mode.

    ``dynamics`` is ``f(x, theta, t)``, or ``F(x, y, theta, t)`` when the mode
    has an algebraic layer. ``state_jacobian`` / ``param_jacobian`` are
    optional analytic ``D_x f`` and ``D_theta f`` for ODE modes.
    """

    id: ModeId
    dynamics: Callable
    invariant_check: Callable | None = None
    algebraic: AlgebraicLayer | None = None
    state_jacobian: Callable | None = None
    param_jacobian: Callable | None = None


@dataclass(frozen=True)
class TransitionSpec:
    """Guarded transition ``source -> target``.

    ``reset=None`` means the identity map; its Jacobians are then exact.
    Guard derivatives default to central differences when not supplied.
    """

    source: ModeId
    target: ModeId
    guard: Callable
    guard_direction: GuardDirection = GuardDirection.EITHER
    reset: Callable | None = None
    reset_state_jacobian: Callable | None = None
    reset_param_jacobian: Callable | None = None
    reset_time_derivative: Callable | None = None
    guard_state_gradient: Callable | None = None
    guard_param_gradient: Callable | None = None
    guard_time_derivative: Callable | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "guard_direction", GuardDirection(self.guard_direction))

    @property
    def identity_reset(self) -> bool:
        return self.reset is None

    def crosses(self, g_a: float, g_b: float) -> bool:
        """Whether the guard moving from ``g_a`` to ``g_b`` is an accepted crossing."""
        rising = g_a < 0.0 <= g_b
        falling = g_a > 0.0 >= g_b
        if self.guard_direction is GuardDirection.RISING:
            return rising
        if self.guard_direction is GuardDirection.FALLING:
            return falling
        return rising or falling


@dataclass(frozen=True)
class HybridSystemSpec:
    n_states: int
    n_params: int
    modes: Sequence[ModeSpec]
    transitions: Sequence[TransitionSpec]
    initial_mode: ModeId
    initial_state: np.ndarray
    name: str = "hybrid"
    state_names: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_states < 1 or self.n_params < 1:
            raise ValidationError("n_states and n_params must be at least 1")
        ids = [m.id for m in self.modes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate mode identifiers")
        for tr in self.transitions:
            if tr.source not in ids or tr.target not in ids:
                raise ValidationError(f"transition {tr.source}->{tr.target} references an unknown mode")
        if self.initial_mode not in ids:
            raise ValidationError(f"unknown initial mode {self.initial_mode!r}")
        x0 = as_vector(self.initial_state, "initial_state", self.n_states)
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if not self.state_names:
            object.__setattr__(self, "state_names", tuple(f"x{i + 1}" for i in range(self.n_states)))
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"theta{i + 1}" for i in range(self.n_params)))

    def mode(self, q: ModeId) -> ModeSpec:
        for m in self.modes:
            if m.id == q:
                return m
        raise ValidationError(f"unknown mode {q!r}")

    def outgoing(self, q: ModeId) -> list[tuple[int, TransitionSpec]]:
        return [(k, tr) for k, tr in enumerate(self.transitions) if tr.source == q]

    @property
    def has_algebraic(self) -> bool:
        return any(m.algebraic is not None for m in self.modes)


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    event_tol_time: float = 1e-10
    event_tol_guard: float = 1e-10
    max_step: float = math.inf
    max_events: int = 10_000
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    transversality_floor: float = 1e-8
    guard_scan_points: int = 4

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "event_tol_time", "event_tol_guard",
                     "newton_tol", "transversality_floor"):
            check_positive(getattr(self, name), name)
        if not float(self.max_step) > 0:
            raise ValidationError("max_step must be strictly positive")
        if not (isinstance(self.max_events, int) and self.max_events > 0):
            raise ValidationError("max_events must be a positive integer")
        if self.newton_max_iters < 1 or self.guard_scan_points < 1:
            raise ValidationError("newton_max_iters and guard_scan_points must be positive")


# --------------------------------------------------------------------------- #
# algebraic layer


def solve_algebraic(layer: AlgebraicLayer, x, theta, t: float, y_guess=None,
                    tol: float = 1e-10, max_iters: int = 50) -> np.ndarray:
    """Damped Newton solve of ``c(x, y, theta, t) = 0`` for ``y``."""
    y = np.array(layer.initial_guess if y_guess is None else y_guess, dtype=float)

    def resid(yy):
        return np.asarray(layer.residual(x, yy, theta, t), dtype=float)

    r = resid(y)
    norm = np.linalg.norm(r)
    for _ in range(max_iters):
        if norm <= tol:
            return y
        if layer.residual_jacobian is not None:
            jac = np.asarray(layer.residual_jacobian(x, y, theta, t), dtype=float)
        else:
            jac = numeric_jacobian(resid, y, 1e-7)
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise AlgebraicSolveError("singular algebraic Jacobian") from exc
        if not np.all(np.isfinite(step)):
            raise AlgebraicSolveError("singular algebraic Jacobian")
        lam = 1.0
        while True:
            y_new = y - lam * step
            r_new = resid(y_new)
            norm_new = np.linalg.norm(r_new)
            if np.isfinite(norm_new) and (norm_new < norm or norm_new <= tol):
                break
            lam *= 0.5
            if lam < 1e-6:
                raise AlgebraicSolveError("Newton line search failed")
        y, r, norm = y_new, r_new, norm_new
    if norm <= tol:
        return y
    raise AlgebraicSolveError(f"Newton did not converge in {max_iters} iterations (|c| = {norm:.3e})")


class AlgebraicCache:
    """Per-simulation warm starts for algebraic layers, keyed by mode."""

    def __init__(self, config: IntegratorConfig | None = None):
        self.config = config or IntegratorConfig()
        self._last: dict = {}

    def solve(self, mode: ModeSpec, x, theta, t) -> np.ndarray:
        layer = mode.algebraic
        guess = self._last.get(mode.id, layer.initial_guess)
        y = solve_algebraic(layer, x, theta, t, guess, self.config.newton_tol, self.config.newton_max_iters)
        self._last[mode.id] = y
        return y


def evaluate_dynamics(spec: HybridSystemSpec, q: ModeId, x, theta, t: float,
                      cache: AlgebraicCache | None = None) -> np.ndarray:
    """Vector field of mode ``q``; DAE modes return the reduced field."""
    mode = spec.mode(q)
    x = np.asarray(x, dtype=float)
    if mode.algebraic is None:
        f = mode.dynamics(x, theta, t)
    else:
        cache = cache or AlgebraicCache()
        y = cache.solve(mode, x, theta, t)
        f = mode.dynamics(x, y, theta, t)
    f = np.asarray(f, dtype=float)
    if f.shape != (spec.n_states,):
        raise ValidationError(f"mode {q!r} dynamics returned shape {f.shape}, expected ({spec.n_states},)")
    return f


# --------------------------------------------------------------------------- #
# guards and resets


def guard_value(transition: TransitionSpec, x, theta, t: float) -> float:
    return float(transition.guard(np.asarray(x, dtype=float), theta, t))


def guard_gradients(transition: TransitionSpec, x, theta, t: float, scale: float = 1e-7):
    """Return ``(D_x g, D_theta g, D_t g)`` at ``(x, theta, t)``."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if transition.guard_state_gradient is not None:
        gx = np.asarray(transition.guard_state_gradient(x, theta, t), dtype=float).reshape(-1)
    else:
        gx = numeric_jacobian(lambda xx: transition.guard(xx, theta, t), x, scale)[0]
    if transition.guard_param_gradient is not None:
        gp = np.asarray(transition.guard_param_gradient(x, theta, t), dtype=float).reshape(-1)
    else:
        gp = numeric_jacobian(lambda pp: transition.guard(x, pp, t), theta, scale)[0]
    if transition.guard_time_derivative is not None:
        gt = float(transition.guard_time_derivative(x, theta, t))
    else:
        gt = float(numeric_derivative(lambda s: transition.guard(x, theta, s), t, scale)[0])
    return gx, gp, gt


def check_transversality(transition: TransitionSpec, x_minus, theta, tau: float, f_minus) -> float:
    """Guard rate ``D_t g + D_x g . f^-`` at a crossing."""
    gx, _, gt = guard_gradients(transition, x_minus, theta, tau)
    return float(gt + gx @ np.asarray(f_minus, dtype=float))


def apply_reset(transition: TransitionSpec, x_minus, theta, tau: float) -> np.ndarray:
    x_minus = np.asarray(x_minus, dtype=float)
    if transition.reset is None:
        return x_minus.copy()
    x_plus = np.asarray(transition.reset(x_minus, theta, tau), dtype=float)
    if x_plus.shape != x_minus.shape:
        raise ValidationError(f"reset returned shape {x_plus.shape}, expected {x_minus.shape}")
    if not np.all(np.isfinite(x_plus)):
        raise NumericalError(f"reset {transition.source}->{transition.target} returned non-finite state")
    return x_plus


# --------------------------------------------------------------------------- #
# dense output and arcs


class DenseTrajectory:
    """Piecewise dense output built from consecutive integrator steps."""

    def __init__(self, breaks: Sequence[float], pieces: Sequence[Callable]):
        self.breaks = np.asarray(breaks, dtype=float)
        self.pieces = list(pieces)
        if len(self.pieces) != max(len(self.breaks) - 1, 0):
            raise ValueError("need one piece per interval")

    @property
    def t_start(self) -> float:
        return float(self.breaks[0])

    @property
    def t_end(self) -> float:
        return float(self.breaks[-1])

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return self._eval_scalar(float(t_arr))
        return np.stack([self._eval_scalar(float(s)) for s in t_arr])

    def _eval_scalar(self, t: float) -> np.ndarray:
        if not self.pieces:
            raise ValueError("empty trajectory")
        k = int(np.searchsorted(self.breaks, t, side="right")) - 1
        k = min(max(k, 0), len(self.pieces) - 1)
        return np.asarray(self.pieces[k](t), dtype=float)


class _ConstantPiece:
    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def __call__(self, t):
        return self.value.copy()


@dataclass
class Segment:
    mode: ModeId
    t_start: float
    t_end: float
    interpolant: DenseTrajectory
    grid: np.ndarray
    states: np.ndarray

    def __call__(self, t):
        return self.interpolant(t)


@dataclass
class EventRecord:
    index: int
    time: float
    source: ModeId
    target: ModeId
    pre_state: np.ndarray
    post_state: np.ndarray
    guard_rate: float
    transition_index: int
    guard_value: float = 0.0


@dataclass
class HybridArc:
    segments: list[Segment]
    events: list[EventRecord]
    horizon: tuple[float, float]
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def event_times(self) -> np.ndarray:
        return np.array([ev.time for ev in self.events])

    @property
    def mode_sequence(self) -> list:
        return [seg.mode for seg in self.segments]

    def segment_at(self, t: float) -> Segment:
        """Segment containing ``t`` (right-continuous at events)."""
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg
        return self.segments[-1]

    def state(self, t: float) -> np.ndarray:
        return self.segment_at(t)(t)

    def sample(self, times) -> tuple[np.ndarray, list]:
        times = np.asarray(times, dtype=float)
        states, modes = [], []
        for t in times:
            seg = self.segment_at(float(t))
            states.append(seg(float(t)))
            modes.append(seg.mode)
        return np.array(states), modes


# --------------------------------------------------------------------------- #
# event localization


def locate_event(dense: Callable, transition: TransitionSpec, theta, bracket: tuple[float, float],
                 tol_time: float = 1e-10, tol_guard: float = 1e-10, scan_points: int = 1) -> float:
    """Earliest accepted guard crossing of ``transition`` inside ``bracket``.

    ``dense(t)`` returns the state. The bracket is first scanned at
    ``scan_points`` sub-intervals to isolate the earliest sign change, then
    refined by Illinois regula falsi with bisection safeguards. The returned
    time lies on the post-crossing side of the root.
    """
    t_lo, t_hi = float(bracket[0]), float(bracket[1])

    def g(t):
        return guard_value(transition, dense(t), theta, t)

    ts = np.linspace(t_lo, t_hi, max(int(scan_points), 1) + 1)
    gs = [g(ts[0])]
    sub = None
    for k in range(1, ts.size):
        gs.append(g(ts[k]))
        if transition.crosses(gs[k - 1], gs[k]):
            sub = (ts[k - 1], ts[k], gs[k - 1], gs[k])
            break
    if sub is None:
        raise NoCrossingError(
            f"guard {transition.source}->{transition.target} has no accepted crossing on [{t_lo}, {t_hi}]"
        )
    a, b, ga, gb = sub
    if gb == 0.0:
        return float(b)
    fa, fb = ga, gb  # Illinois-weighted copies
    side = 0
    for it in range(200):
        width = b - a
        if (width <= tol_time and abs(gb) <= tol_guard) or np.nextafter(a, b) >= b:
            break
        if it >= 100 or fa == fb:
            c = 0.5 * (a + b)
        else:
            c = b - fb * (b - a) / (fb - fa)
            if not (a < c < b):
                c = 0.5 * (a + b)
        # keep the secant from crawling along one side
        if side != 0 and it % 4 == 3:
            c = 0.5 * (a + b)
        gc = g(c)
        if gc == 0.0:
            return float(c)
        if np.sign(gc) == np.sign(ga):
            a, ga, fa = c, gc, gc
            if side == -1:
                fb *= 0.5
            side = -1
        else:
            b, gb, fb = c, gc, gc
            if side == 1:
                fa *= 0.5
            side = 1
    return float(b)


# --------------------------------------------------------------------------- #
# simulation


def _rhs_factory(spec: HybridSystemSpec, q: ModeId, theta, cache: AlgebraicCache):
    mode = spec.mode(q)
    n = spec.n_states
    if mode.algebraic is None:
        def rhs(t, x):
            return np.asarray(mode.dynamics(x, theta, t), dtype=float).reshape(n)
    else:
        def rhs(t, x):
            y = cache.solve(mode, x, theta, t)
            return np.asarray(mode.dynamics(x, y, theta, t), dtype=float).reshape(n)
    return rhs


def simulate(spec: HybridSystemSpec, theta, x0=None, q0: ModeId | None = None, T: float = 1.0,
             config: IntegratorConfig | None = None, t0: float = 0.0) -> HybridArc:
    """Execute the hybrid system on ``[t0, T]`` and return the hybrid arc."""
    config = config or IntegratorConfig()
    theta = as_vector(theta, "theta", spec.n_params)
    x = as_vector(spec.initial_state if x0 is None else x0, "x0", spec.n_states).copy()
    q = spec.initial_mode if q0 is None else q0
    spec.mode(q)
    if not np.all(np.isfinite(x)):
        raise ValidationError("initial state must be finite")
    if not T > t0:
        raise ValidationError("horizon end must exceed start time")

    cache = AlgebraicCache(config)
    segments: list[Segment] = []
    events: list[EventRecord] = []
    t = float(t0)
    while True:
        seg, event = _integrate_mode(spec, q, theta, t, x, float(T), config, cache, len(events))
        segments.append(seg)
        if event is None:
            break
        events.append(event)
        if len(events) > config.max_events:
            raise ZenoError(f"more than {config.max_events} events before t = {event.time:.6g}")
        t, x, q = event.time, event.post_state.copy(), event.target
    return HybridArc(segments, events, (float(t0), float(T)), theta.copy())


def _integrate_mode(spec, q, theta, t_start, x_start, T, config, cache, event_index):
    mode = spec.mode(q)
    rhs = _rhs_factory(spec, q, theta, cache)
    outgoing = spec.outgoing(q)
    grid = [t_start]
    states = [x_start.copy()]
    breaks = [t_start]
    pieces = []
    if t_start >= T:
        interp = DenseTrajectory([t_start, t_start], [_ConstantPiece(x_start)])
        return Segment(q, t_start, t_start, interp, np.array(grid), np.array(states)), None

    g_prev = {k: guard_value(tr, x_start, theta, t_start) for k, tr in outgoing}
    solver = RK45(rhs, t_start, x_start, T, max_step=config.max_step,
                  rtol=config.rel_tol, atol=config.abs_tol)
    warned = False
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"integration failed in mode {q!r} at t = {solver.t:.6g}: {msg}")
        t_old, t_new = solver.t_old, solver.t
        x_new = solver.y.copy()
        dense = solver.dense_output()
        hits = []
        for k, tr in outgoing:
            g_new = guard_value(tr, x_new, theta, t_new)
            scan_hit = False
            if config.guard_scan_points > 1 and not tr.crosses(g_prev[k], g_new):
                # interior excursions that return to the same side
                ts = np.linspace(t_old, t_new, config.guard_scan_points + 1)[1:-1]
                g_last = g_prev[k]
                for s in ts:
                    g_s = guard_value(tr, dense(s), theta, s)
                    if tr.crosses(g_last, g_s):
                        scan_hit = True
                        break
                    g_last = g_s
            if tr.crosses(g_prev[k], g_new) or scan_hit:
                tau = locate_event(dense, tr, theta, (t_old, t_new), config.event_tol_time,
                                   config.event_tol_guard, config.guard_scan_points)
                hits.append((tau, k, tr))
            g_prev[k] = g_new
        if hits:
            hits.sort(key=lambda h: h[0])
            tau, k, tr = hits[0]
            for other in hits[1:]:
                if other[0] - tau <= config.event_tol_time:
                    raise AmbiguousEventError(
                        f"simultaneous crossings of {tr.source}->{tr.target} and "
                        f"{other[2].source}->{other[2].target} at t = {tau:.12g}"
                    )
            x_minus = np.asarray(dense(tau), dtype=float)
            pieces.append(dense)
            breaks.append(tau)
            grid.append(tau)
            states.append(x_minus)
            f_minus = rhs(tau, x_minus)
            rate = check_transversality(tr, x_minus, theta, tau, f_minus)
            if abs(rate) < config.transversality_floor:
                raise GrazingError(
                    f"grazing contact on {tr.source}->{tr.target} at t = {tau:.12g} (rate {rate:.3e})"
                )
            x_plus = apply_reset(tr, x_minus, theta, tau)
            event = EventRecord(event_index, tau, tr.source, tr.target, x_minus, x_plus, rate, k,
                                guard_value(tr, x_minus, theta, tau))
            interp = DenseTrajectory(breaks, pieces)
            return Segment(q, t_start, tau, interp, np.array(grid), np.array(states)), event
        pieces.append(dense)
        breaks.append(t_new)
        grid.append(t_new)
        states.append(x_new)
        if mode.invariant_check is not None and not warned and not mode.invariant_check(x_new):
            logger.warning("state left the invariant of mode %r at t = %.6g", q, t_new)
            warned = True
    interp = DenseTrajectory(breaks, pieces)
    return Segment(q, t_start, grid[-1], interp, np.array(grid), np.array(states)), None
