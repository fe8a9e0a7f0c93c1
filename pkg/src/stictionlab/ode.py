"""Numerical kernel: adaptive RK5(4) integration with dense output and event
location, scalar bisection, and a damped Newton solver with finite-difference
Jacobians.

The stepper is scipy's Dormand-Prince 5(4) pair (PI step control, quartic
dense output); the event loop, error semantics and trajectory bookkeeping are
implemented here so that event times are located to ``1e-12 * span`` and
stiffness failures surface as errors carrying the last accepted state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq

from .errors import BracketError, MaxStepsExceeded, NewtonError, StiffnessError

__all__ = ["EventSpec", "EventHit", "Trajectory", "integrate", "bisect_root", "newton_solve"]


@dataclass
class EventSpec:
    """Scalar event g(t, state) = 0.

    direction: +1 triggers only on increasing crossings, -1 on decreasing,
    0 on any sign change.  terminal events truncate the integration.
    """

    fn: Callable[[float, np.ndarray], float]
    direction: int = 0
    terminal: bool = False


@dataclass
class EventHit:
    index: int        # position in the events list
    t: float
    state: np.ndarray


@dataclass
class Trajectory:
    """Accepted-step nodes plus the per-step dense-output interpolants."""

    t: np.ndarray
    states: np.ndarray               # shape (n_nodes, dim)
    _segments: list = field(default_factory=list, repr=False)
    n_steps: int = 0
    n_rhs: int = 0

    @property
    def t0(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def end_state(self) -> np.ndarray:
        return self.states[-1]

    def eval(self, t):
        """Dense-output evaluation at scalar or array times inside the span."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t_arr.size, self.states.shape[1]))
        ts = self.t
        forward = ts[-1] >= ts[0]
        for j, tj in enumerate(t_arr):
            if not self._segments:
                out[j] = self.states[0]
                continue
            lo, hi = (ts[0], ts[-1]) if forward else (ts[-1], ts[0])
            if not (lo - 1e-12 <= tj <= hi + 1e-12):
                raise ValueError(f"t={tj} outside trajectory span [{lo}, {hi}]")
            if forward:
                k = np.searchsorted(ts, tj, side="right") - 1
            else:
                k = np.searchsorted(-ts, -tj, side="right") - 1
            k = min(max(k, 0), len(self._segments) - 1)
            out[j] = self._segments[k](tj)
        return out[0] if np.isscalar(t) or np.asarray(t).ndim == 0 else out


def integrate(field, s0, t_span, tols=(1e-9, 1e-11), events: Sequence[EventSpec] = (),
              max_steps: int = 1_000_000, max_step: float = np.inf):
    """Adaptive Dormand-Prince 5(4) integration with event location.

    ``field(t, state)`` is the RHS; backward spans are allowed.  Events are
    bracketed on accepted steps and refined on the dense output to
    ``|dt| <= 1e-12 * span``; a terminal event truncates the trajectory at
    the event point.  Returns ``(Trajectory, [EventHit, ...])``.

    Raises StiffnessError when the step size underflows (the error carries
    the last accepted time/state) and MaxStepsExceeded past ``max_steps``.
    """
    rtol, atol = tols
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 == t1:
        raise ValueError("degenerate t_span")
    span = abs(t1 - t0)
    s0 = np.asarray(s0, dtype=float)

    solver = RK45(field, t0, s0, t1, rtol=rtol, atol=atol, max_step=max_step)
    ts = [t0]
    states = [s0.copy()]
    segments: list = []
    hits: list[EventHit] = []
    g_old = [ev.fn(t0, s0) for ev in events]
    n_steps = 0
    xtol = max(1e-12 * span, 5e-15 * max(abs(t0), abs(t1), 1.0))

    while solver.status == "running":
        if n_steps >= max_steps:
            raise MaxStepsExceeded(f"exceeded {max_steps} steps at t={solver.t}")
        solver.step()
        if solver.status == "failed":
            raise StiffnessError(
                f"step size underflow at t={solver.t}", t=solver.t, state=solver.y.copy())
        n_steps += 1
        dense = solver.dense_output()
        t_new, y_new = solver.t, solver.y

        # event bracketing on this step
        step_hits = []
        g_new = [ev.fn(t_new, y_new) for ev in events]
        for i, ev in enumerate(events):
            a, b = g_old[i], g_new[i]
            crossed = (a < 0.0 < b) or (b < 0.0 < a) or (b == 0.0 and a != 0.0)
            if not crossed:
                continue
            if ev.direction > 0 and not a < b:
                continue
            if ev.direction < 0 and not a > b:
                continue
            if b == 0.0:
                t_star = t_new
            else:
                t_star = brentq(lambda tt: ev.fn(tt, dense(tt)),
                                ts[-1], t_new, xtol=xtol, rtol=8.881784197001252e-16)
            step_hits.append((t_star, i))
        step_hits.sort(key=lambda h: h[0], reverse=(t1 < t0))

        terminal_hit = None
        for t_star, i in step_hits:
            hit = EventHit(i, t_star, np.asarray(dense(t_star), dtype=float))
            hits.append(hit)
            if events[i].terminal:
                terminal_hit = hit
                break

        if terminal_hit is not None:
            ts.append(terminal_hit.t)
            states.append(terminal_hit.state.copy())
            segments.append(dense)
            break

        ts.append(t_new)
        states.append(y_new.copy())
        segments.append(dense)
        g_old = g_new

    traj = Trajectory(np.array(ts), np.array(states), segments,
                      n_steps=n_steps, n_rhs=solver.nfev)
    return traj, hits


def bisect_root(f, bracket, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Bisection on a sign-changing bracket; returns the midpoint at width tol."""
    lo, hi = float(bracket[0]), float(bracket[1])
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo:.3g}, {fhi:.3g}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol or mid in (lo, hi):
            return mid
        fm = f(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def fd_jacobian(residual, x, h_base: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian with step max(h_base, h_base*|x_i|)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    J = np.empty((n, n))
    for i in range(n):
        h = max(h_base, h_base * abs(x[i]))
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        J[:, i] = (np.asarray(residual(xp)) - np.asarray(residual(xm))) / (2.0 * h)
    return J


def newton_solve(residual, x0, tol: float = 1e-10, max_iter: int = 50,
                 jacobian=None, h_base: float = 1e-6):
    """Damped Newton iteration; returns (root, jacobian_at_root).

    The Jacobian defaults to central finite differences.  Steps are halved
    until the residual norm decreases; a Jacobian with condition number above
    1e12 or failure to converge raises NewtonError.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()

    def res(v):
        return np.atleast_1d(np.asarray(residual(v), dtype=float))

    F = res(x)
    for _ in range(max_iter):
        nrm = np.max(np.abs(F))
        J = fd_jacobian(residual, x, h_base) if jacobian is None else np.asarray(jacobian(x))
        if nrm <= tol:
            return x, J
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > 1e12:
            raise NewtonError(f"singular Jacobian at x={x} (residual {nrm:.3e})")
        dx = np.linalg.solve(J, -F)
        lam = 1.0
        for _ in range(12):
            x_try = x + lam * dx
            F_try = res(x_try)
            if np.max(np.abs(F_try)) < nrm:
                x, F = x_try, F_try
                break
            lam *= 0.5
        else:
            x = x + dx
            F = res(x)
    nrm = np.max(np.abs(F))
    if nrm <= tol:
        return x, (fd_jacobian(residual, x, h_base) if jacobian is None else np.asarray(jacobian(x)))
    raise NewtonError(f"no convergence in {max_iter} iterations (residual {nrm:.3e})")
