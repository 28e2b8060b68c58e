"""Independent reference computations used by the test suite.

The event-map oracle integrates with fixed-step classical RK4 so that the
discrete flow is a smooth function of the initial state; first-order
remainders then scale cleanly with the perturbation size.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


def rk4_step(f, x, t, h):
    k1 = f(x, t)
    k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(x + h * k3, t + h)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_flow(f, x, t0, t1, n):
    h = (t1 - t0) / n
    t = t0
    for _ in range(n):
        x = rk4_step(f, x, t, h)
        t += h
    return x


def flow_to_guard(f, g, x, t0, dt, max_steps=100000):
    """March on a fixed grid until ``g`` changes sign, then solve for the crossing inside the step."""
    t = t0
    g0 = g(x, t)
    for _ in range(max_steps):
        x_new = rk4_step(f, x, t, dt)
        g1 = g(x_new, t + dt)
        if np.sign(g1) != np.sign(g0) and g1 != 0.0:
            s = brentq(lambda s: g(rk4_step(f, x, t, s), t + s), 0.0, dt, xtol=1e-300, rtol=1e-15, maxiter=500)
            return t + s, rk4_step(f, x, t, s)
        x, t, g0 = x_new, t + dt, g1
    raise RuntimeError("guard not reached")


class EventMapOracle:
    """Map from a state at ``-half`` through one event to the state at ``+half``.

    Args:
        f_pre, f_post: Vector fields ``f(x, t)``.
        guard: Scalar guard ``g(x, t)``.
        reset: Reset ``R(x, t)``.
        x_event: Nominal pre-event state at the crossing (taken at ``t = 0``).
        half: Half-width of the time window around the event.
        n: RK4 steps per half window.
    """

    def __init__(self, f_pre, f_post, guard, reset, x_event, half, n=2000):
        self.f_pre, self.f_post, self.guard, self.reset = f_pre, f_post, guard, reset
        self.half, self.n = float(half), int(n)
        self.dt = self.half / self.n
        self.xi0 = rk4_flow(f_pre, np.asarray(x_event, dtype=float), 0.0, -self.half, self.n)
        self.tau0, self.x_minus0 = flow_to_guard(f_pre, guard, self.xi0, -self.half, self.dt)

    def __call__(self, xi):
        tau, x_minus = flow_to_guard(self.f_pre, self.guard, np.asarray(xi, dtype=float), -self.half, self.dt)
        return rk4_flow(self.f_post, self.reset(x_minus, tau), tau, self.half, self.n)

    def flow_jacobians(self, eps=1e-5):
        """Central-difference Jacobians of the fixed-interval pre and post flows along the nominal."""

        def jac(fun, x):
            cols = []
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = eps * max(1.0, abs(x[i]))
                cols.append((fun(x + e) - fun(x - e)) / (2 * e[i]))
            return np.column_stack(cols)

        pre = jac(lambda x: rk4_flow(self.f_pre, x, -self.half, self.tau0, self.n), self.xi0)
        x_plus0 = self.reset(self.x_minus0, self.tau0)
        post = jac(lambda x: rk4_flow(self.f_post, x, self.tau0, self.half, self.n), x_plus0)
        return pre, post

    def remainders(self, saltation, direction, sizes):
        """``|| M(xi0 + h d) - M(xi0) - Phi+ Xi Phi- h d || / h^2`` for each size ``h``."""
        pre, post = self.flow_jacobians()
        base = self(self.xi0)
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        lin = post @ saltation @ pre
        out = []
        for h in sizes:
            true = self(self.xi0 + h * d) - base
            out.append(np.linalg.norm(true - lin @ (h * d)))
        return np.array(out)


def dop853_event_times(spec_fun, guard, x0, theta, t_end, direction=0):
    """Event times of a single-mode system by DOP853 with event location at tight tolerances."""

    def ev(t, x):
        return guard(x, theta, t)

    ev.direction = direction
    sol = solve_ivp(lambda t, x: spec_fun(x, theta, t), (0.0, t_end), x0, method="DOP853",
                    rtol=1e-12, atol=1e-14, events=ev)
    return sol.t_events[0]


def tight_config():
    from saltfim.hybrid import IntegratorConfig

    return IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, event_tol_time=1e-15, event_tol_guard=1e-14,
                            newton_tol=1e-13)


def central_difference_over_theta(fun, theta, rel_step=1e-6):
    """Columns ``(fun(theta + h e_i) - fun(theta - h e_i)) / 2h`` with ``h = rel_step |theta_i|``."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.size):
        h = rel_step * max(abs(theta[i]), 1e-300)
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (up[i] - dn[i]))
    return np.stack(cols, axis=-1)


def scaled_relative_error(approx, reference, theta):
    """Relative Frobenius error of logarithmic sensitivities ``M diag(theta)``."""
    s = np.asarray(theta, dtype=float)
    a = np.asarray(approx) * s
    r = np.asarray(reference) * s
    return float(np.linalg.norm(a - r) / np.linalg.norm(r))
