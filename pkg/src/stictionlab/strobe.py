"""The eps > 0 stroboscopic analysis.

Half map by direct integration of the scaled slow-time system, fixed points
by dichotomy-adapted multiple shooting (see ``shooting``), Floquet data from
renormalized variational products, natural/pseudo-arclength continuation in
xi with fold and period-doubling detection, convergence tests against the
singular half map, full-system simulation with stick/slip tagging, and the
horseshoe-evidence diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, geometry, return_map, shooting
from .errors import EscapeError, NewtonError, StiffnessError, StictionLabError
from .model import ModelParams, manifold_x
from .ode import EventSpec, integrate
from .shooting import ShootingGrid, build_grid, detect_jump_angles, monodromy, newton, seed_nodes

__all__ = [
    "LimitCycle", "BranchPoint", "BifurcationEvent", "BifurcationDiagram",
    "half_map_Q", "half_map_R", "find_limit_cycle", "continue_branch",
    "r_eps_vs_r0", "simulate", "SimResult", "escape_profile", "plateau_count",
    "horseshoe_evidence", "TrajectoryGraph",
]

_LOG_CLAMP = 690.0
_SYM = np.diag([-1.0, -1.0])


def _is_standard(params: ModelParams) -> bool:
    return params.phi.meta.get("family") == "standard"


def _flow_raw(params: ModelParams, x, y2, th0, theta_span, tols, with_stm,
              y2_cap, rec_cap=0, stride=0, cross_thr=0.0, cross_cap=0, dirn=1.0):
    """One scaled-system flow on the compiled or generic path."""
    if params.eps <= 0.0:
        raise ValueError("eps > 0 required for stroboscopic flows")
    rtol, atol = tols
    if _is_standard(params):
        rec = np.empty((rec_cap, 3)) if rec_cap else _kernels._DUMMY_REC
        cbuf = np.empty((cross_cap, 2)) if cross_cap else _kernels._DUMMY_CROSS
        (st, xe, ye, m00, m01, m10, m11, ls, nacc, nrec, ncross, mxa, _) = \
            _kernels.flow_scaled(float(x), float(y2), float(th0), params.xi,
                                 params.eps, params.mu_d,
                                 params.phi.meta["alpha"], params.phi.meta["beta"],
                                 float(theta_span), rtol, atol, bool(with_stm),
                                 float(y2_cap), rec, int(stride), float(cross_thr), cbuf,
                                 50_000_000, float(dirn))
        if st == 1:
            raise StiffnessError(f"step underflow in scaled flow", state=(xe, ye))
        if st == 3:
            raise StictionLabError("step budget exhausted in scaled flow")
        return {
            "escaped": st == 2,
            "end": np.array([xe, ye]),
            "M": np.array([[m00, m01], [m10, m11]]),
            "log_scale": ls,
            "n_steps": nacc,
            "max_abs_y2": mxa,
            "rec": rec[:nrec] if rec_cap else None,
            "crossings": cbuf[:ncross] if cross_cap else None,
        }
    return _flow_python(params, x, y2, th0, theta_span, tols, with_stm, y2_cap,
                        rec_cap, dirn)


def _flow_python(params, x, y2, th0, theta_span, tols, with_stm, y2_cap,
                 rec_cap, dirn=1.0):
    """Reference path for pluggable regularizations (scipy stepper)."""
    ie2 = 1.0 / params.eps**2
    phi, phid = params.phi.eval, params.phi.deriv
    xi, mu_d = params.xi, params.mu_d
    n = 6 if with_stm else 2

    def fld(tau, u):
        th = th0 + dirn * xi * tau
        out = np.empty(n)
        out[0] = dirn * u[1]
        out[1] = dirn * ie2 * (-u[0] - math.sin(th) - mu_d * float(phi(u[1])))
        if with_stm:
            j21 = -dirn * ie2
            j22 = -dirn * ie2 * mu_d * float(phid(u[1]))
            out[2], out[3] = dirn * u[4], dirn * u[5]
            out[4] = j21 * u[2] + j22 * u[4]
            out[5] = j21 * u[3] + j22 * u[5]
        return out

    u0 = np.zeros(n)
    u0[0], u0[1] = x, y2
    if with_stm:
        u0[2] = u0[5] = 1.0
    events = [EventSpec(lambda t, u: abs(u[1]) - y2_cap, terminal=True)]
    traj, hits = integrate(fld, u0, (0.0, theta_span / xi), tols=tols,
                           events=events, max_steps=20_000_000)
    end = traj.end_state
    M = np.array([[end[2], end[3]], [end[4], end[5]]]) if with_stm else np.eye(2)
    rec = None
    if rec_cap:
        rec = np.column_stack([traj.t, traj.states[:, 0], traj.states[:, 1]])
    return {"escaped": bool(hits), "end": end[:2].copy(), "M": M, "log_scale": 0.0,
            "n_steps": traj.n_steps, "max_abs_y2": float(np.max(np.abs(traj.states[:, 1]))),
            "rec": rec, "crossings": None}


def _make_flow(tols, y2_cap, rec_cap=250_000):
    """Adapter with the signature the shooting engine expects."""

    def flow(params, state, th0, dtheta, with_stm, rec=False):
        if dtheta == 0.0:
            return {"end": np.asarray(state, dtype=float).copy(), "M": np.eye(2),
                    "log_scale": 0.0, "escaped": False, "max_abs_y2": abs(state[1]),
                    "rec": np.array([[0.0, state[0], state[1]]])}
        dirn = 1.0 if dtheta > 0 else -1.0
        return _flow_raw(params, state[0], state[1], th0, abs(dtheta), tols,
                         with_stm, y2_cap, rec_cap=rec_cap if rec else 0,
                         stride=1 if rec else 0, dirn=dirn)

    return flow


# ---------------------------------------------------------------------------
# Half maps
# ---------------------------------------------------------------------------

def half_map_Q(params: ModelParams, theta_star: float, point, tols=(1e-9, 1e-11),
               with_stm=False, y2_cap=None):
    """Flow from {theta = theta_star} to {theta = theta_star + pi} (no symmetry).

    Returns (end_point, M, log_scale); the flow derivative is M * exp(log_scale).
    """
    if y2_cap is None:
        y2_cap = 50.0 / params.eps
    out = _flow_raw(params, point[0], point[1], theta_star, np.pi, tols, with_stm, y2_cap)
    if out["escaped"]:
        raise EscapeError(f"orbit left |y2| <= {y2_cap} during the half map")
    return out["end"], out["M"], out["log_scale"]


def half_map_R(params: ModelParams, theta_star: float, point, tols=(1e-9, 1e-11),
               with_stm=False, y2_cap=None):
    """The half map R = S o Q; derivative is S M exp(log_scale)."""
    q, M, ls = half_map_Q(params, theta_star, point, tols, with_stm, y2_cap)
    return _SYM @ q, _SYM @ M, ls


def _eig_with_logs(P: np.ndarray, L: float):
    """Eigen-data of P * exp(L): (clamped complex values, log magnitudes, phases)."""
    w = np.linalg.eigvals(P)
    absw = np.maximum(np.abs(w), 1e-300)
    logs = np.where(np.abs(w) > 0.0, np.log(absw) + L, -np.inf)
    phases = np.where(np.abs(w) > 0.0, w / absw, 1.0)
    vals = phases * np.exp(np.clip(logs, -745.0, _LOG_CLAMP))
    order = np.argsort(-logs)
    return vals[order], logs[order], phases[order]


def real_multipliers(multipliers, logs):
    """Real members of a multiplier set, magnitudes clamped to float range."""
    out = []
    for v, lg in zip(multipliers, logs):
        a = abs(v)
        if a == 0.0:
            out.append(0.0)
            continue
        if abs(v.imag) <= 1e-9 * a:
            mag = math.exp(min(lg, _LOG_CLAMP)) if np.isfinite(lg) else 0.0
            out.append(math.copysign(mag, v.real))
    return out


# ---------------------------------------------------------------------------
# Limit cycles
# ---------------------------------------------------------------------------

@dataclass
class LimitCycle:
    """Fixed point of the half map with Floquet data and a period trajectory."""

    params: ModelParams
    theta_star: float
    points: np.ndarray            # shooting nodes, shape (m, 2)
    residual: float
    multipliers: np.ndarray       # of R_eps, magnitude-clamped complex
    mult_logs: np.ndarray         # natural-log magnitudes of R_eps multipliers
    full_multipliers: np.ndarray  # of P_eps = R_eps^2
    theta: np.ndarray             # full-period trajectory nodes
    x: np.ndarray
    y2: np.ndarray
    max_abs_y2: float
    canard_measure: float
    classification: str
    grid: ShootingGrid = field(repr=False, default=None)

    @property
    def point(self) -> np.ndarray:
        return self.points[0]

    @property
    def n_segments(self) -> int:
        return self.points.shape[0]

    @property
    def max_y(self) -> float:
        return self.params.eps * self.max_abs_y2

    @property
    def attracting(self) -> bool:
        return bool(np.all(self.mult_logs < 0.0))

    def half_graph(self) -> "TrajectoryGraph":
        return TrajectoryGraph(self.params, self.theta, self.y2, self.x)


class TrajectoryGraph:
    """Slow-graph view of a computed symmetric cycle (for re-seeding grids).

    Exposes the same protocol as SingularCycle: ``m(theta)`` periodized with
    the half-period antisymmetry, and ``jumps_in(lo, hi)`` detected from the
    trajectory's slip-level crossings.
    """

    def __init__(self, params, theta, y2, x):
        half = theta <= theta[0] + np.pi + 1e-12
        self.theta0 = float(theta[0])
        self._th = np.asarray(theta[half])
        self._y2 = np.asarray(y2[half])
        self._x = np.asarray(x[half])
        slip = params.eps**-0.5
        self._jumps = []
        for t in detect_jump_angles(self._th, self._y2, slip):
            side = -1.0 if np.interp(t, self._th, self._y2) < 0 else 1.0
            # falling side = sign of y2 just before the crossing
            side = -1.0 if np.interp(t - 1e-6, self._th, self._y2) < 0 else 1.0
            self._jumps.append((t, side))

    def m(self, theta):
        t = np.asarray(theta, dtype=float)
        k = np.floor((t - self.theta0) / np.pi)
        base = t - k * np.pi
        vals = np.interp(base, self._th, self._y2)
        out = np.where(k % 2 == 0, vals, -vals)
        return float(out) if np.isscalar(theta) else out

    def jumps_in(self, lo, hi):
        out = []
        for t_j, side in self._jumps:
            k0 = int(math.floor((lo - t_j) / np.pi)) - 1
            k1 = k0 + int(math.ceil((hi - lo) / np.pi)) + 3
            for k in range(k0, k1):
                t = t_j + k * np.pi
                if lo < t <= hi:
                    out.append((t, side if k % 2 == 0 else -side))
        return sorted(out)


def _default_segments(seed_cycle) -> int:
    if seed_cycle is None:
        return 1
    has_rep = getattr(seed_cycle, "has_canard", None)
    if has_rep is None:
        has_rep = bool(seed_cycle.jumps_in(0.0, 2.0 * np.pi))
    return 24 if has_rep else 4


class _PointGraph:
    """Trivial slow graph for seeding plain single-point shooting."""

    def __init__(self, y2):
        self._y2 = float(y2)

    def m(self, theta):
        t = np.asarray(theta, dtype=float)
        out = np.where(np.floor(t / np.pi) % 2 == 0, self._y2, -self._y2)
        return float(out) if np.isscalar(theta) else out

    def jumps_in(self, lo, hi):
        return []


def _cycle_trajectory(params, grid: ShootingGrid, pts, flow):
    """Full-period piecewise trajectory (second half by symmetry)."""
    th_all, x_all, y2_all = [], [], []
    maxabs = 0.0
    for j in range(grid.m):
        t0, t1 = grid.theta[j], grid.theta[j + 1]
        if grid.forward[j]:
            out = flow(params, pts[j], t0, t1 - t0, False, rec=True)
            rec = out["rec"]
            th = t0 + params.xi * rec[:, 0]
        else:
            endpoint = pts[(j + 1) % grid.m] if j < grid.m - 1 else grid.wrap @ pts[0]
            out = flow(params, endpoint, t1, t0 - t1, False, rec=True)
            rec = out["rec"][::-1]
            th = (t1 - params.xi * out["rec"][:, 0])[::-1]
        maxabs = max(maxabs, out["max_abs_y2"])
        th_all.append(th)
        x_all.append(rec[:, 1])
        y2_all.append(rec[:, 2])
    th = np.concatenate(th_all)
    x = np.concatenate(x_all)
    y2 = np.concatenate(y2_all)
    order = np.argsort(th)
    th, x, y2 = th[order], x[order], y2[order]
    th_full = np.concatenate([th, th + np.pi])
    x_full = np.concatenate([x, -x])
    y2_full = np.concatenate([y2, -y2])
    return th_full, x_full, y2_full, maxabs


def _classify(params, th, y2, max_abs_y2):
    """Cycle class from the trajectory: slip excursions vs canard exposure.

    max |y| against sqrt(eps) separates stick from slip; a sustained stretch
    at repelling-sheet heights (above the folds but far below slip scale)
    marks a canard segment, which plain stick-slip orbits lack.
    """
    slip_level = params.eps**-0.5
    band = (np.abs(y2) > 1.1 * params.delta) & (np.abs(y2) < slip_level)
    dth = np.diff(th)
    mids = band[:-1] & band[1:]
    canard_measure = float(np.sum(dth[mids]))
    if canard_measure > 0.02:
        cls = "canard-type"
    elif params.eps * max_abs_y2 > math.sqrt(params.eps):
        cls = "stick-slip"
    else:
        cls = "pure-stick"
    return cls, canard_measure


def _assemble_cycle(params, grid, pts, res, flow, want_trajectory=True) -> LimitCycle:
    P, L = monodromy(params, grid, pts, flow)
    vals, lgs, phases = _eig_with_logs(P, L)
    full_vals = (phases**2) * np.exp(np.clip(2.0 * lgs, -745.0, _LOG_CLAMP))
    if want_trajectory:
        th, x, y2, maxabs = _cycle_trajectory(params, grid, pts, flow)
        cls, cm = _classify(params, th, y2, maxabs)
    else:
        th = x = y2 = np.empty(0)
        maxabs = float(np.max(np.abs(pts[:, 1])))
        cls, cm = "unclassified", 0.0
    return LimitCycle(params, grid.theta_star, pts, res, vals, lgs, full_vals,
                      th, x, y2, maxabs, cm, cls, grid)


def find_limit_cycle(params: ModelParams, theta_star: float, seed=None,
                     seed_cycle=None, n_segments: int | None = None,
                     tols=(1e-9, 1e-11), tol: float = 1e-9,
                     y2_cap: float | None = None,
                     want_trajectory: bool = True) -> LimitCycle:
    """Locate a symmetric limit cycle as a fixed point of the half map.

    ``seed`` is an (x, y2) point on the section (plain shooting);
    ``seed_cycle`` is a slow-graph object (a SingularCycle skeleton or a
    TrajectoryGraph) that seeds a direction-adapted multiple-shooting grid.
    """
    if y2_cap is None:
        y2_cap = 50.0 / params.eps
    flow = _make_flow(tols, y2_cap)
    if seed_cycle is None:
        if seed is None:
            raise ValueError("need seed or seed_cycle")
        graph = _PointGraph(seed[1])
        m = n_segments or 1
        grid = build_grid(params, graph, theta_star, m)
        pts0 = seed_nodes(params, graph, grid, flow)
        pts0[0] = np.asarray(seed, dtype=float)
    else:
        m = n_segments or _default_segments(seed_cycle)
        grid = build_grid(params, seed_cycle, theta_star, m)
        pts0 = seed_nodes(params, seed_cycle, grid, flow)
    pts, blocks, res = newton(params, grid, pts0, flow, tol=tol)
    return _assemble_cycle(params, grid, pts, res, flow, want_trajectory)


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------

@dataclass
class BranchPoint:
    xi: float
    x: float
    y2: float
    max_y: float
    multipliers: np.ndarray
    mult_logs: np.ndarray
    classification: str
    n_segments: int
    residual: float
    points: np.ndarray = field(repr=False, default=None)
    grid: ShootingGrid = field(repr=False, default=None)


@dataclass
class BifurcationEvent:
    kind: str                    # 'fold' | 'period-doubling'
    xi: float
    point: np.ndarray
    multiplier: float
    bracket: tuple


@dataclass
class BifurcationDiagram:
    eps: float
    theta_star: float
    points: list
    events: list
    notes: list = field(default_factory=list)

    def xi_of(self, kind: str):
        for ev in self.events:
            if ev.kind == kind:
                return ev.xi
        return None


def _branch_point(cyc: LimitCycle) -> BranchPoint:
    return BranchPoint(cyc.params.xi, float(cyc.point[0]), float(cyc.point[1]),
                       cyc.max_y, cyc.multipliers, cyc.mult_logs,
                       cyc.classification, cyc.n_segments, cyc.residual,
                       points=cyc.points.copy(), grid=cyc.grid)


def _test_functions(bp: BranchPoint):
    reals = real_multipliers(bp.multipliers, bp.mult_logs)
    if not reals:
        return None, None
    return max(reals) - 1.0, min(reals) + 1.0     # (fold test, PD test)


def _solve_on_grid(params, xi, grid, seed_pts, flow, tol, want_traj=True) -> LimitCycle:
    p = params.with_(xi=xi)
    pts, blocks, res = newton(p, grid, seed_pts, flow, tol=tol)
    return _assemble_cycle(p, grid, pts, res, flow, want_traj)


def _regrid_from(cyc: LimitCycle, m=None) -> tuple:
    """Fresh grid and seeds built from a converged cycle's own trajectory."""
    graph = cyc.half_graph()
    m = m or cyc.n_segments
    grid = build_grid(cyc.params, graph, cyc.theta_star, m)
    return grid, graph


def _locate_pd(params, theta_star, bp_a, bp_b, flow, tol):
    """Bisection in xi on the PD test function between two branch points."""
    a, b = bp_a, bp_b
    ga = _test_functions(a)[1]
    while abs(b.xi - a.xi) > 1e-5:
        xi_mid = 0.5 * (a.xi + b.xi)
        if a.points.shape == b.points.shape and a.grid is b.grid:
            seed, grid = 0.5 * (a.points + b.points), a.grid
        else:
            seed, grid = a.points, a.grid
        try:
            cyc = _solve_on_grid(params, xi_mid, grid, seed, flow, tol, want_traj=False)
        except (NewtonError, EscapeError):
            break
        bp_mid = _branch_point(cyc)
        g_mid = _test_functions(bp_mid)[1]
        if g_mid is None:
            break
        if (ga < 0.0) == (g_mid < 0.0):
            a, ga = bp_mid, g_mid
        else:
            b = bp_mid
    xi_star = 0.5 * (a.xi + b.xi)
    mult = min(real_multipliers(a.multipliers, a.mult_logs))
    return BifurcationEvent("period-doubling", xi_star, np.array([a.x, a.y2]),
                            mult, (min(bp_a.xi, bp_b.xi), max(bp_a.xi, bp_b.xi)))


_XI_SCALE = 0.02


def _arclength_residual(params, grid, U, pred, tau, flow):
    m = grid.m
    xi = U[-1] * _XI_SCALE
    pts = U[:-1].reshape(m, 2)
    p = params.with_(xi=xi)
    F, blocks = shooting.residual_and_blocks(p, grid, pts, flow)
    g = float(tau @ (U - pred))
    return np.concatenate([F, [g]]), blocks, p


def _arclength_newton(params, grid, U0, pred, tau, flow, tol, max_iter=25):
    U = U0.copy()
    m = grid.m
    F, blocks, p = _arclength_residual(params, grid, U, pred, tau, flow)
    for _ in range(max_iter):
        r = float(np.max(np.abs(F)))
        if r <= tol:
            return U, blocks, p, r
        J = np.zeros((2 * m + 1, 2 * m + 1))
        J[:2 * m, :2 * m] = shooting.jacobian(grid, blocks)
        h_xi = 1e-7 * max(1.0, abs(U[-1] * _XI_SCALE))
        F2, _ = shooting.residual_and_blocks(
            params.with_(xi=U[-1] * _XI_SCALE + h_xi), grid,
            U[:-1].reshape(m, 2), flow, with_stm=False)
        J[:2 * m, -1] = (F2 - F[:-1]) / h_xi * _XI_SCALE
        J[-1, :] = tau
        try:
            dU = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular arclength Jacobian: {exc}") from exc
        lam = 1.0
        for _ in range(16):
            trial = U + lam * dU
            try:
                F_t, blocks_t, p_t = _arclength_residual(params, grid, trial, pred, tau, flow)
            except EscapeError:
                lam *= 0.5
                continue
            if np.max(np.abs(F_t)) < r:
                U, F, blocks, p = trial, F_t, blocks_t, p_t
                break
            lam *= 0.5
        else:
            raise NewtonError(f"arclength Newton stalled at residual {r:.3e}")
    raise NewtonError("arclength Newton: no convergence")


def _bp_from_arclength(params, grid, U, blocks, flow) -> BranchPoint:
    xi = U[-1] * _XI_SCALE
    pts = U[:-1].reshape(grid.m, 2)
    p = params.with_(xi=xi)
    P, L = monodromy(p, grid, pts, flow)
    vals, lgs, _ = _eig_with_logs(P, L)
    maxabs = float(np.max(np.abs(pts[:, 1])))
    return BranchPoint(xi, float(pts[0, 0]), float(pts[0, 1]), p.eps * maxabs,
                       vals, lgs, "unclassified", grid.m, 0.0,
                       points=pts.copy(), grid=grid)


def _locate_fold(params, theta_star, bp_a, bp_b, flow, tol):
    """Bisection on the fold test function along the branch chord (spans the turn)."""
    grid = bp_a.grid
    U_a = np.concatenate([bp_a.points.ravel(), [bp_a.xi / _XI_SCALE]])
    U_b = np.concatenate([bp_b.points.ravel(), [bp_b.xi / _XI_SCALE]])
    ga = _test_functions(bp_a)[0]
    lo, hi = 0.0, 1.0
    ev_bp, g_best = bp_a, abs(ga)
    for _ in range(30):
        t = 0.5 * (lo + hi)
        pred = (1.0 - t) * U_a + t * U_b
        tau = (U_b - U_a) / np.linalg.norm(U_b - U_a)
        try:
            U, blocks, p, _ = _arclength_newton(params, grid, pred, pred, tau, flow, tol)
        except NewtonError:
            break
        bp_mid = _bp_from_arclength(params, grid, U, blocks, flow)
        g_mid = _test_functions(bp_mid)[0]
        if g_mid is None:
            break
        if abs(g_mid) < g_best:
            ev_bp, g_best = bp_mid, abs(g_mid)
        if (ga < 0.0) == (g_mid < 0.0):
            lo = t
        else:
            hi = t
        if abs(g_mid) < 1e-10 or (hi - lo) * abs(bp_b.xi - bp_a.xi) < 1e-7:
            break
    mult = max(real_multipliers(ev_bp.multipliers, ev_bp.mult_logs))
    return BifurcationEvent("fold", ev_bp.xi, np.array([ev_bp.x, ev_bp.y2]),
                            mult, (min(bp_a.xi, bp_b.xi), max(bp_a.xi, bp_b.xi)))


def _detect_events(params, theta_star, diagram, bp_a, bp_b, flow, tol):
    ga_f, ga_p = _test_functions(bp_a)
    gb_f, gb_p = _test_functions(bp_b)
    if None in (ga_f, gb_f):
        return
    if ga_p * gb_p < 0.0:
        diagram.events.append(_locate_pd(params, theta_star, bp_a, bp_b, flow, tol))
    if ga_f * gb_f < 0.0:
        diagram.events.append(_locate_fold(params, theta_star, bp_a, bp_b, flow, tol))


def continue_branch(params: ModelParams, theta_star: float, xi_range,
                    seed=None, seed_cycle=None, n_segments: int | None = None,
                    dxi0: float = 0.004, dxi_max: float = 0.01,
                    dxi_floor: float = 1e-6, max_points: int = 400,
                    tols=(1e-9, 1e-11), tol: float = 1e-9,
                    stop_log_mult: float = 250.0,
                    regrid_drift: float = 0.5) -> BifurcationDiagram:
    """Continue a symmetric-cycle branch over a xi range, detecting folds and
    period doublings by multiplier crossings (+1 and -1 of the half map).

    Natural-parameter stepping with secant prediction and adaptive step
    halving; on persistent failure near a fold the stepper switches to
    pseudo-arclength and rounds the turn.  The shooting grid is rebuilt from
    the latest converged trajectory whenever its snapped jump node drifts or
    a step fails.
    """
    xi0, xi1 = float(xi_range[0]), float(xi_range[1])
    direction = math.copysign(1.0, xi1 - xi0)
    y2_cap = 50.0 / params.eps
    flow = _make_flow(tols, y2_cap)
    p0 = params.with_(xi=xi0)
    cyc = find_limit_cycle(p0, theta_star, seed=seed, seed_cycle=seed_cycle,
                           n_segments=n_segments, tols=tols, tol=tol)
    branch = [_branch_point(cyc)]
    diagram = BifurcationDiagram(params.eps, theta_star, branch, [])
    dxi = direction * dxi0
    mode = "natural"
    last_cycle = cyc
    U_prev = None
    while len(branch) < max_points:
        last = branch[-1]
        if mode == "natural":
            xi_next = last.xi + dxi
            if direction * (xi_next - xi1) > 0.0:
                xi_next = xi1
            if xi_next == last.xi:
                break
            if len(branch) >= 2 and branch[-2].grid is last.grid:
                prev = branch[-2]
                w = (xi_next - last.xi) / (last.xi - prev.xi)
                seed_pts = last.points + w * (last.points - prev.points)
            else:
                seed_pts = last.points
            tried_regrid = False
            while True:
                try:
                    cyc = _solve_on_grid(params, xi_next, last.grid, seed_pts, flow, tol)
                    break
                except (NewtonError, EscapeError, StiffnessError):
                    if not tried_regrid and last_cycle is not None:
                        grid2, graph2 = _regrid_from(last_cycle)
                        try:
                            seed2 = seed_nodes(params.with_(xi=last.xi), graph2, grid2, flow)
                            cyc_re = _solve_on_grid(params, last.xi, grid2, seed2, flow, tol)
                            branch[-1] = _branch_point(cyc_re)
                            last = branch[-1]
                            last_cycle = cyc_re
                            seed_pts = last.points
                            tried_regrid = True
                            continue
                        except (NewtonError, EscapeError, StiffnessError):
                            tried_regrid = True
                    cyc = None
                    break
            if cyc is None:
                dxi *= 0.5
                if abs(dxi) >= dxi_floor:
                    continue
                g_fold = _test_functions(last)[0]
                if g_fold is not None and abs(g_fold) < 0.9:
                    mode = "arclength"
                    U_prev = None
                    continue
                diagram.notes.append(f"branch lost at xi={last.xi:.6f} (natural)")
                break
            bp = _branch_point(cyc)
            _detect_events(params, theta_star, diagram, last, bp, flow, tol)
            branch.append(bp)
            last_cycle = cyc
            # drift check: rebuild the grid when the jump moved off its node
            jumps = cyc.half_graph().jumps_in(theta_star, theta_star + np.pi) \
                if cyc.theta.size else []
            if cyc.grid.jump_nodes and jumps:
                t_node = cyc.grid.theta[cyc.grid.jump_nodes[0]]
                gap = jumps[0][0] - t_node
                rate = bp.xi * params.eps**2
                lam = -params.mu_d * float(params.phi.deriv(
                    float(np.interp(t_node, cyc.theta, cyc.y2))))
                if lam > 0 and not (0.2 * shooting._GAP_DECADES
                                    < gap * lam / rate
                                    < 2.5 * shooting._GAP_DECADES):
                    grid2, graph2 = _regrid_from(cyc)
                    try:
                        seed2 = seed_nodes(params.with_(xi=bp.xi), graph2, grid2, flow)
                        cyc2 = _solve_on_grid(params, bp.xi, grid2, seed2, flow, tol)
                        branch[-1] = _branch_point(cyc2)
                        last_cycle = cyc2
                    except (NewtonError, EscapeError, StiffnessError):
                        pass
            if abs(dxi) < dxi_max:
                dxi *= 1.4
                if abs(dxi) > dxi_max:
                    dxi = math.copysign(dxi_max, dxi)
            if np.max(branch[-1].mult_logs) > stop_log_mult:
                diagram.notes.append(
                    f"stopped at xi={branch[-1].xi:.6f}: multiplier log "
                    f"{np.max(branch[-1].mult_logs):.1f}")
                break
            if branch[-1].xi == xi1:
                break
        else:
            U_last = np.concatenate([last.points.ravel(), [last.xi / _XI_SCALE]])
            if U_prev is None:
                if len(branch) >= 2 and branch[-2].points.shape == last.points.shape:
                    U_prev = np.concatenate([branch[-2].points.ravel(),
                                             [branch[-2].xi / _XI_SCALE]])
                else:
                    U_prev = U_last.copy()
                    U_prev[-1] -= direction * 1e-3 / _XI_SCALE
            step = U_last - U_prev
            ns = np.linalg.norm(step)
            if ns < 1e-12:
                diagram.notes.append("arclength tangent degenerate")
                break
            step = step / ns * min(ns * 1.5, 0.08)
            bp = None
            for _ in range(14):
                pred = U_last + step
                tau = step / np.linalg.norm(step)
                try:
                    U, blocks, p_sol, _ = _arclength_newton(params, last.grid, pred,
                                                            pred, tau, flow, tol)
                    bp = _bp_from_arclength(params, last.grid, U, blocks, flow)
                    break
                except NewtonError:
                    step *= 0.5
            if bp is None:
                diagram.notes.append(f"branch lost at xi={last.xi:.6f} (arclength)")
                break
            _detect_events(params, theta_star, diagram, last, bp, flow, tol)
            branch.append(bp)
            U_prev = U_last
            if np.max(bp.mult_logs) > stop_log_mult:
                diagram.notes.append(
                    f"stopped at xi={bp.xi:.6f}: multiplier log {np.max(bp.mult_logs):.1f}")
                break
            if not (min(xi0, xi1) - 5e-3 <= bp.xi <= max(xi0, xi1) + 5e-3):
                break
    return diagram


# ---------------------------------------------------------------------------
# Convergence to the singular half map
# ---------------------------------------------------------------------------

def r_eps_vs_r0(params: ModelParams, theta_star: float, y2_points, eps_list,
                tols=(1e-10, 1e-12)):
    """sup-norm distance between the eps and singular half maps at test points.

    Test points are lifted to the critical manifold; the singular image is
    compared as a section point (manifold x-coordinate attached).  Returns an
    array of shape (len(eps_list),) with the max distance over the points.
    """
    y2_points = np.asarray(y2_points, dtype=float)
    r0_imgs = []
    for y2 in y2_points:
        out, _ = return_map.singular_half_map_R0(params.with_(eps=0.0), theta_star, float(y2))
        r0_imgs.append(np.array([manifold_x(params, (out, theta_star + np.pi)), out]))
    norms = []
    for eps in eps_list:
        p = params.with_(eps=eps)
        worst = 0.0
        for y2, img0 in zip(y2_points, r0_imgs):
            start = np.array([manifold_x(p, (y2, theta_star)), y2])
            img, _, _ = half_map_R(p, theta_star, start, tols=tols)
            worst = max(worst, float(np.max(np.abs(img - img0))))
        norms.append(worst)
    return np.array(norms)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    phase: np.ndarray            # True where slipping (|y| > sqrt(eps))
    slip_crossings: np.ndarray   # (theta, code) rows; |code| 1 upper / 2 lower
    params: ModelParams

    def slip_count(self, periods: float = 1.0):
        """(total, upper, lower) slip excursions in a trailing window of
        ``periods`` forcing periods.

        The window is anchored at the midpoint of the largest slip-free gap
        in the trailing span so whole excursions are never split.
        """
        if self.slip_crossings.size == 0:
            return 0, 0, 0
        th_c = self.slip_crossings[:, 0]
        codes = self.slip_crossings[:, 1]
        width = 2.0 * np.pi * periods
        tail = th_c[th_c > self.theta[-1] - width]
        if tail.size >= 2:
            gaps = np.diff(tail)
            k = int(np.argmax(gaps))
            hi = tail[k] + 0.5 * gaps[k]
        else:
            hi = self.theta[-1]
        lo = hi - width
        enter = (codes > 0) & (th_c > lo) & (th_c <= hi)
        upper = int(np.sum(np.abs(codes[enter]) == 1.0))
        lower = int(np.sum(np.abs(codes[enter]) == 2.0))
        return upper + lower, upper, lower


def simulate(params: ModelParams, s0, t_span, tols=(1e-9, 1e-11),
             max_nodes: int = 200_000) -> SimResult:
    """Integrate the full oscillator (original time scale) with slip tagging.

    The integration runs in the scaled slow-time chart to keep the
    regularization argument O(1); outputs are mapped back to (t, x, y).
    """
    if params.eps <= 0.0:
        raise ValueError("simulate needs eps > 0")
    x0, y0, th0 = (float(v) for v in s0)
    t0, t1 = float(t_span[0]), float(t_span[1])
    theta_span = params.xi * params.eps * (t1 - t0)
    if theta_span <= 0.0:
        raise ValueError("forward, nondegenerate t_span required")
    out = _flow_raw(params, x0, y0 / params.eps, th0, theta_span, tols, False,
                    y2_cap=1e9, rec_cap=max_nodes, stride=1,
                    cross_thr=params.eps**-0.5, cross_cap=100_000)
    rec = out["rec"]
    tau = rec[:, 0]
    t = t0 + tau / params.eps
    x = rec[:, 1]
    y = params.eps * rec[:, 2]
    theta = th0 + params.xi * tau
    phase = np.abs(y) > math.sqrt(params.eps)
    cross = out["crossings"] if out["crossings"] is not None else np.empty((0, 2))
    return SimResult(t, x, y, theta, phase, cross, params)


# ---------------------------------------------------------------------------
# Horseshoe evidence
# ---------------------------------------------------------------------------

def escape_profile(params: ModelParams, theta_star: float, center: float,
                   halfwidth: float, n_points: int, window=(None, None),
                   max_iter: int = 60, tols=(1e-9, 1e-11)):
    """Escape-time profile of the half map along a line across the canard.

    The line is {x = manifold_x(center), y2 in center +- halfwidth}; an orbit
    escapes when its y2 leaves ``window`` (default: the line padded
    threefold).  Returns (y2_grid, counts).
    """
    lo = window[0] if window[0] is not None else center - 3.0 * halfwidth
    hi = window[1] if window[1] is not None else center + 3.0 * halfwidth
    y2s = np.linspace(center - halfwidth, center + halfwidth, n_points)
    x0 = float(manifold_x(params, (center, theta_star)))
    xs = np.full(n_points, x0)
    if not _is_standard(params):
        raise StictionLabError("escape profile requires the standard family")
    counts, _ = _kernels.escape_times(
        xs, y2s.copy(), theta_star, params.xi, params.eps, params.mu_d,
        params.phi.meta["alpha"], params.phi.meta["beta"], tols[0], tols[1],
        50.0 / params.eps, lo, hi, max_iter)
    return y2s, counts


def plateau_count(counts) -> int:
    """Number of maximal constant runs in an escape-time profile."""
    counts = np.asarray(counts)
    if counts.size == 0:
        return 0
    return int(1 + np.sum(counts[1:] != counts[:-1]))


class _PairGraph:
    """Two half-period graphs glued into one full-period seed (period-2 work)."""

    def __init__(self, cyc_a: LimitCycle, cyc_b: LimitCycle, theta_star):
        self.a = cyc_a.half_graph()
        self.b = cyc_b.half_graph()
        self.theta0 = float(theta_star)

    def m(self, theta):
        t = np.asarray(theta, dtype=float)
        k = np.floor((t - self.theta0) / np.pi).astype(int)
        first = (k % 2 == 0)
        va = self.a.m(t)
        vb = self.b.m(t)
        out = np.where(first, va, vb)
        return float(out) if np.isscalar(theta) else out

    def jumps_in(self, lo, hi):
        out = []
        for t_j, side in self.a.jumps_in(lo, hi):
            k = int(math.floor((t_j - self.theta0) / np.pi))
            if k % 2 == 0:
                out.append((t_j, side))
        for t_j, side in self.b.jumps_in(lo, hi):
            k = int(math.floor((t_j - self.theta0) / np.pi))
            if k % 2 == 1:
                out.append((t_j, side))
        return sorted(out)


def _attempt_period_two(params, theta_star, cyc_a, cyc_b, tols, tol=1e-8):
    """Newton on the full-period map seeking a genuine period-2 point of R.

    Seeds a non-symmetric full-period shooting problem by alternating the two
    period-1 canard cycles' halves.  Returns (point_a, point_b, residual) or
    None when Newton fails.
    """
    flow = _make_flow(tols, 50.0 / params.eps)
    graph = _PairGraph(cyc_a, cyc_b, theta_star)
    m = 2 * max(cyc_a.n_segments, cyc_b.n_segments)
    grid = build_grid(params, graph, theta_star, m, span=2.0 * np.pi, wrap=np.eye(2))
    try:
        pts0 = seed_nodes(params, graph, grid, flow)
        pts, blocks, res = newton(params, grid, pts0, flow, tol=tol)
        pb, _, _ = half_map_R(params, theta_star, pts[0], tols=tols)
    except (NewtonError, EscapeError, StiffnessError, np.linalg.LinAlgError):
        return None
    return pts[0], pb, res


def horseshoe_evidence(params: ModelParams, n_line: int = 240, depths=(1, 2, 4),
                       line_halfwidth: float = 0.05, tols=(1e-9, 1e-11)) -> dict:
    """Assemble the horseshoe-evidence report at the given parameters.

    Items: (a) singular crossing count and transversality angles; (b) the
    contraction integral over the later-jumping canard skeleton from
    theta_1 - pi to theta_2; (c) the two period-1 cycles continued from the
    skeletons, with multiplier data; (d) escape-time plateau counts at
    doubling grid refinements across the canard; (e) a period-2 point of the
    half map when Newton converges.  Item failures are reported per item.
    """
    report: dict = {"xi": params.xi, "eps": params.eps}
    p0 = params.with_(eps=0.0)
    crossings = geometry.intersections_gamma_plus_image(p0)
    report["intersections"] = {
        "count": len(crossings),
        "transverse": [bool(c.transverse) for c in crossings],
        "angles": [float(c.angle) for c in crossings],
        "thetas": [float(c.theta) for c in crossings],
    }
    cycles = return_map.singular_cycles_from_canard(p0)
    report["singular_cycles"] = [
        {"role": c.role, "classification": c.classification,
         "theta_jump": c.jumps[0].theta, "closure_error": c.closure_error}
        for c in cycles
    ]
    if len(cycles) < 2:
        report["a6_integral"] = {"error": "fewer than two singular cycles"}
        return report
    th1 = cycles[0].jumps[0].theta
    th2 = cycles[-1].jumps[0].theta
    a6 = geometry.a6_integral(p0, cycles[-1].m, (th1 - np.pi, th2))
    report["a6_integral"] = {"value": float(a6), "range": [th1 - np.pi, th2],
                             "negative": bool(a6 < 0.0)}
    theta_star = th1 - np.pi + 0.02
    fixed = []
    found = []
    for skel in (cycles[0], cycles[-1]):
        try:
            lc = find_limit_cycle(params, theta_star, seed_cycle=skel, tols=tols)
            found.append(lc)
            fixed.append({
                "role": skel.role,
                "point": [float(lc.point[0]), float(lc.point[1])],
                "residual": lc.residual,
                "mult_logs": [float(v) for v in lc.mult_logs],
                "expanding": bool(np.max(lc.mult_logs) > 0.0),
                "classification": lc.classification,
                "n_segments": lc.n_segments,
            })
        except (NewtonError, EscapeError, StictionLabError) as exc:
            fixed.append({"role": skel.role, "error": str(exc)})
    report["period_one"] = fixed

    gamma_p, _ = geometry.compute_canard(p0, "plus")
    center = float(gamma_p.y2_at(theta_star))
    profiles = []
    for d in depths:
        _, counts = escape_profile(params, theta_star, center, line_halfwidth,
                                   n_line * d + 1, tols=tols)
        profiles.append({"depth": int(d), "n": int(n_line * d + 1),
                         "plateaus": plateau_count(counts),
                         "max_time": int(np.max(counts))})
    report["escape"] = {"center": center, "halfwidth": line_halfwidth,
                        "profiles": profiles}

    if len(found) == 2:
        p2 = _attempt_period_two(params, theta_star, found[0], found[1], tols)
        if p2 is not None:
            pa, pb, res = p2
            d_ab = float(np.max(np.abs(pa - pb)))
            d_min = min(float(np.max(np.abs(pa - lc.point))) for lc in found)
            report["period_two"] = {
                "found": bool(d_ab > 1e-5 and d_min > 1e-6),
                "points": [[float(v) for v in pa], [float(v) for v in pb]],
                "residual": float(res),
                "separation": d_ab,
            }
        else:
            report["period_two"] = {"found": False, "error": "Newton did not converge"}
    return report
