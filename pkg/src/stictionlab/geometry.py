"""Singular (eps = 0) geometry on the critical manifold.

Folded singularities and their classification, vrai canards of the folded
saddles, the fold-jump return maps G/L and their image curves, the section
at y2 = y2_minus, the three critical forcing rates (degenerate-node,
canard-through-image, tangency), and the contraction integral used by the
horseshoe argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .errors import BracketError, CanardMissesSection, NoFoldedSingularities
from .model import ModelParams, apply_symmetry_reduced, manifold_x, reduced_desing_field, reduced_desing_jacobian
from .ode import EventSpec, bisect_root, integrate

__all__ = [
    "FoldedSingularity", "PlanarCurve", "ThetaInterval",
    "folded_singularities", "folded_saddles", "xi_dn",
    "compute_canard", "y2_minus", "map_G", "map_L", "jump_set_J",
    "theta_upsilon", "find_xi_pd", "canard_image_curves",
    "intersections_gamma_plus_image", "find_xi_t", "a6_integral", "hamiltonian",
]


@dataclass(frozen=True)
class FoldedSingularity:
    """Equilibrium of the desingularized reduced flow on a fold line."""

    y2: float
    theta: float
    kind: str                 # 'saddle' | 'node' | 'focus'
    trace: float
    det: float
    disc: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns

    @property
    def saddle(self) -> bool:
        return self.kind == "saddle"

    @property
    def point(self) -> np.ndarray:
        return np.array([self.y2, self.theta])


@dataclass
class PlanarCurve:
    """Polyline on the critical manifold, stored with increasing theta."""

    theta: np.ndarray
    y2: np.ndarray
    provenance: str
    terminated_by: str | None = None

    def __post_init__(self):
        if self.theta[0] > self.theta[-1]:
            self.theta = self.theta[::-1].copy()
            self.y2 = self.y2[::-1].copy()

    @property
    def arclength(self) -> np.ndarray:
        d = np.hypot(np.diff(self.theta), np.diff(self.y2))
        return np.concatenate([[0.0], np.cumsum(d)])

    def y2_at(self, theta):
        """Graph evaluation (theta is strictly monotone along every curve here)."""
        return np.interp(theta, self.theta, self.y2)

    def refined(self, max_dtheta: float) -> "PlanarCurve":
        """Linear mesh refinement to a maximum theta edge length."""
        th, y = [self.theta[0]], [self.y2[0]]
        for i in range(len(self.theta) - 1):
            n = max(1, int(math.ceil((self.theta[i + 1] - self.theta[i]) / max_dtheta)))
            seg_t = np.linspace(self.theta[i], self.theta[i + 1], n + 1)[1:]
            th.extend(seg_t)
            y.extend(np.interp(seg_t, self.theta[i:i + 2], self.y2[i:i + 2]))
        return PlanarCurve(np.array(th), np.array(y), self.provenance, self.terminated_by)

    def mapped(self, fn, provenance: str) -> "PlanarCurve":
        y2new, thnew = fn(self.y2, self.theta)
        return PlanarCurve(np.asarray(thnew), np.asarray(y2new), provenance, self.terminated_by)


@dataclass(frozen=True)
class ThetaInterval:
    """Open theta-arc (lo, hi), to be read mod 2*pi."""

    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, theta, margin: float = 0.0) -> bool:
        t = (theta - self.lo) % (2.0 * np.pi)
        return margin < t < self.width - margin


def _require_folded(params: ModelParams):
    if not params.xi > params.delta:
        raise NoFoldedSingularities(
            f"xi={params.xi} <= delta={params.delta}: fold of folded singularities")


def theta_minus(params: ModelParams) -> float:
    """theta-coordinate of the folded saddle on the lower fold: arccos(delta/xi)."""
    _require_folded(params)
    return math.acos(params.delta * params.xi_inv)


def _classify(params: ModelParams, y2: float, theta: float) -> FoldedSingularity:
    J = reduced_desing_jacobian(params, (y2, theta))
    tr = float(np.trace(J))
    det = float(np.linalg.det(J))
    disc = tr * tr - 4.0 * det
    w, V = np.linalg.eig(J)
    if det < 0.0:
        kind = "saddle"
    elif disc >= 0.0:
        kind = "node"
    else:
        kind = "focus"
    return FoldedSingularity(y2, theta, kind, tr, det, disc, w, V)


def folded_singularities(params: ModelParams) -> list[FoldedSingularity]:
    """The four folded singularities for xi > delta.

    Returned in the order: saddle z- = (-delta, theta_-), non-saddle on F_-,
    saddle z+ = S z- = (delta, theta_- + pi), non-saddle on F_+.
    """
    thm = theta_minus(params)
    d = params.delta
    return [
        _classify(params, -d, thm),
        _classify(params, -d, 2.0 * np.pi - thm),
        _classify(params, d, thm + np.pi),
        _classify(params, d, np.pi - thm),
    ]


def folded_saddles(params: ModelParams):
    """(z_minus, z_plus); raises if either fails to be a saddle."""
    sings = folded_singularities(params)
    zm, zp = sings[0], sings[2]
    if not (zm.saddle and zp.saddle):
        raise NoFoldedSingularities(
            f"expected saddles at theta_-={zm.theta:.6f}: got {zm.kind}/{zp.kind}")
    return zm, zp


def node_focus_discriminant(params: ModelParams, xi: float) -> float:
    """Discriminant of the non-saddle folded singularities as a function of xi."""
    d = params.delta
    curv = abs(float(params.phi.deriv2(d)))
    return xi**-2 - 4.0 * params.mu_d * curv * math.sqrt(1.0 - (d / xi) ** 2)


def xi_dn(params: ModelParams, bracket) -> float:
    """Degenerate-node rate: the non-saddle singularities turn node -> focus here."""
    lo, hi = bracket
    if not lo > params.delta:
        raise BracketError(f"bracket must start above delta={params.delta}")
    return bisect_root(lambda xi: node_focus_discriminant(params, xi), (lo, hi), tol=1e-10)


# ---------------------------------------------------------------------------
# Canards
# ---------------------------------------------------------------------------

def _stable_direction(params: ModelParams, sing: FoldedSingularity) -> np.ndarray:
    w, V = sing.eigenvalues.real, sing.eigenvectors.real
    i = int(np.argmin(w))
    if w[i] >= 0.0 or abs(np.linalg.det(V)) < 1e-14:
        raise NoFoldedSingularities(f"degenerate eigenstructure at {sing.point}")
    v = V[:, i]
    return v / np.linalg.norm(v)


def _integrate_reduced(params, start, t_end, events, tols=(1e-11, 1e-13)):
    fld = lambda t, u: reduced_desing_field(params, u)
    return integrate(fld, start, (0.0, t_end), tols=tols, events=events, max_step=0.25)


def _dense_theta_nodes(traj, max_dtheta=1e-3):
    """Resample a reduced-flow trajectory on an even theta mesh via dense output."""
    th = traj.states[:, 1]
    t = traj.t
    lo, hi = (th[0], th[-1]) if th[0] < th[-1] else (th[-1], th[0])
    n = max(8, int(math.ceil((hi - lo) / max_dtheta)))
    grid = np.linspace(lo, hi, n + 1)
    # theta is strictly monotone along these orbits; invert theta(t) by interpolation
    if th[0] < th[-1]:
        t_of_th = np.interp(grid, th, t)
    else:
        t_of_th = np.interp(grid, th[::-1], t[::-1])
    states = traj.eval(t_of_th)
    return states[:, 1], states[:, 0]   # theta, y2


def compute_canard(params: ModelParams, branch: str = "minus", extent: float = 5.5,
                   floor: float | None = None, seed_offset: float = 1e-6,
                   max_dtheta: float = 1e-3):
    """Vrai canard of a folded saddle and its repelling-sheet continuation.

    Returns (gamma, gamma_tilde): gamma is the attracting-sheet branch of the
    saddle's stable set, swept backward until theta has decreased by
    ``extent`` or the curve leaves through a fold; gamma_tilde is the
    continuation on the repelling sheet (the canard proper in reduced time),
    swept until y2 reaches ``floor`` (default -10*delta).  The plus branch is
    the symmetry image of the minus branch, node by node.
    """
    if branch == "plus":
        gm, gt = compute_canard(params, "minus", extent, floor, seed_offset, max_dtheta)
        sym = lambda y2, th: (-y2, th + np.pi)
        return gm.mapped(sym, "gamma_plus"), gt.mapped(sym, "gamma_plus_tilde")
    if branch != "minus":
        raise ValueError(f"branch must be 'minus' or 'plus', got {branch!r}")

    zm, _ = folded_saddles(params)
    v = _stable_direction(params, zm)
    if v[0] < 0.0:
        v = -v          # orient into C_a (y2 increasing from -delta)
    if floor is None:
        floor = -10.0 * params.delta

    # attracting branch: backward sweep inside C_a
    seed = zm.point + seed_offset * v
    th_stop = zm.theta - extent
    events = [
        EventSpec(lambda t, u: u[1] - th_stop, terminal=True),
        EventSpec(lambda t, u: u[0] + params.delta, terminal=True),
        EventSpec(lambda t, u: u[0] - params.delta, terminal=True),
    ]
    traj, hits = _integrate_reduced(params, seed, -2000.0, events)
    reason = {0: "extent", 1: "fold-", 2: "fold+"}.get(hits[0].index if hits else -1, "time-limit")
    th, y2 = _dense_theta_nodes(traj, max_dtheta)
    gamma = PlanarCurve(th, y2, "gamma_minus", terminated_by=reason)

    # repelling continuation: backward in desingularized time = forward canard
    seed = zm.point - seed_offset * v
    events = [EventSpec(lambda t, u: u[0] - floor, terminal=True)]
    traj, hits = _integrate_reduced(params, seed, -2000.0, events)
    th, y2 = _dense_theta_nodes(traj, max_dtheta)
    gamma_tilde = PlanarCurve(th, y2, "gamma_minus_tilde",
                              terminated_by="floor" if hits else "time-limit")
    return gamma, gamma_tilde


# ---------------------------------------------------------------------------
# Fold-jump maps
# ---------------------------------------------------------------------------

def _phi_inverse_Ca(params: ModelParams, values) -> np.ndarray:
    """Inverse of phi restricted to the attracting sheet (-delta, delta).

    Vectorized bisection; phi is strictly increasing there.
    """
    v = np.atleast_1d(np.asarray(values, dtype=float))
    d = params.delta
    if np.any(v < -params.mu) or np.any(v > params.mu):
        raise ValueError("phi target outside attainable range (-mu, mu)")
    lo = np.full_like(v, -d)
    hi = np.full_like(v, d)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = np.asarray(params.phi(mid)) < v
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    return out if np.asarray(values).ndim else float(out[0])


def y2_minus(params: ModelParams) -> float:
    """Landing height of the fold-line jump: phi(y2_minus) = mu - 2 on (-delta, delta)."""
    return float(_phi_inverse_Ca(params, params.mu - 2.0))


def map_G(params: ModelParams, side: str, point):
    """Half-circle slip return map from a repelling sheet to the attracting one.

    minus side: (y2_0 <= -delta, theta) -> (y2_1, theta) where
    phi(y2_1) = -2 - phi(y2_0), the unique solution in (-delta, delta).
    The plus side is S o G_- o S.
    """
    y2, th = float(point[0]), float(point[1])
    if side == "plus":
        y2s, ths = apply_symmetry_reduced((y2, th))
        out = map_G(params, "minus", (y2s, ths))
        return apply_symmetry_reduced(out)
    if side != "minus":
        raise ValueError(f"side must be 'minus' or 'plus', got {side!r}")
    if y2 > -params.delta:
        raise ValueError(f"G_- needs y2 <= -delta, got y2={y2}")
    target = -2.0 - float(params.phi(y2))
    return np.array([_phi_inverse_Ca(params, target), th])


def map_L(params: ModelParams, side: str, point):
    """Direct fast-fiber return: phi(y2_1) = phi(y2_0) with y2_1 > -delta."""
    y2, th = float(point[0]), float(point[1])
    if side == "plus":
        y2s, ths = apply_symmetry_reduced((y2, th))
        out = map_L(params, "minus", (y2s, ths))
        return apply_symmetry_reduced(out)
    if side != "minus":
        raise ValueError(f"side must be 'minus' or 'plus', got {side!r}")
    if y2 >= -params.delta:
        raise ValueError(f"L_- needs y2 < -delta, got y2={y2}")
    return np.array([_phi_inverse_Ca(params, float(params.phi(y2))), th])


def jump_set_J(params: ModelParams, side: str) -> ThetaInterval:
    """Regular jump arc on a fold line; endpoints are folded singularities."""
    thm = theta_minus(params)
    if side == "minus":
        return ThetaInterval(-thm, thm)
    if side == "plus":
        return ThetaInterval(np.pi - thm, np.pi + thm)
    raise ValueError(f"side must be 'minus' or 'plus', got {side!r}")


# ---------------------------------------------------------------------------
# Section Upsilon and the critical rates
# ---------------------------------------------------------------------------

def upsilon_arc(params: ModelParams) -> ThetaInterval:
    """Admissible theta-arc of the section {y2 = y2_minus} (y2 decreasing there)."""
    half = math.acos(max(-1.0, min(1.0, -params.xi_inv * y2_minus(params))))
    return ThetaInterval(-half, half)


def theta_upsilon(params: ModelParams, extent: float = 6.5) -> float:
    """theta-coordinate where the plus canard meets the section {y2 = y2_minus}.

    The backward sweep of gamma_plus on the attracting sheet is event-located
    on the section; the first crossing inside the admissible arc is returned
    (as an unwrapped angle near the arc).  Raises CanardMissesSection when the
    sweep leaves through a fold or exhausts ``extent`` without an admissible
    crossing.
    """
    _, zp = folded_saddles(params)
    v = _stable_direction(params, zp)
    if v[0] > 0.0:
        v = -v          # into C_a from y2 = +delta
    y2m = y2_minus(params)
    seed = zp.point + 1e-6 * v
    th_stop = zp.theta - extent
    events = [
        EventSpec(lambda t, u: u[0] - y2m),                      # section crossings
        EventSpec(lambda t, u: u[1] - th_stop, terminal=True),
        EventSpec(lambda t, u: u[0] + params.delta, terminal=True),
        EventSpec(lambda t, u: u[0] - params.delta, terminal=True),
    ]
    _, hits = _integrate_reduced(params, seed, -2000.0, events)
    cos_bound = -params.xi_inv * y2m
    for h in hits:
        if h.index != 0:
            continue
        th = float(h.state[1])
        if math.cos(th) > cos_bound:
            return th
    raise CanardMissesSection(
        f"gamma_plus misses the section {{y2={y2m:.6f}}} admissibly at xi={params.xi}")


def find_xi_pd(params: ModelParams, bracket, tol: float = 1e-6) -> float:
    """Rate at which the plus canard passes through the image of the saddle.

    Root of theta_upsilon(xi) - theta_-(xi) by bisection.
    """
    def g(xi):
        p = params.with_(xi=xi)
        return theta_upsilon(p) - theta_minus(p)

    return bisect_root(g, bracket, tol=tol)


def canard_image_curves(params: ModelParams, gamma_tilde: PlanarCurve | None = None,
                        max_dtheta: float = 1e-3):
    """Images of the repelling canard branch under the two return mechanisms.

    Returns (G_image, L_image) as curves on the attracting sheet,
    parameterized by the theta of the source points on gamma_tilde_minus.
    """
    if gamma_tilde is None:
        _, gamma_tilde = compute_canard(params, "minus", max_dtheta=max_dtheta)
    src = gamma_tilde.refined(max_dtheta)
    y2G = _phi_inverse_Ca(params, -2.0 - np.asarray(params.phi(src.y2)))
    y2L = _phi_inverse_Ca(params, np.asarray(params.phi(src.y2)))
    return (PlanarCurve(src.theta.copy(), y2G, "G_image"),
            PlanarCurve(src.theta.copy(), y2L, "L_image"))


@dataclass(frozen=True)
class Crossing:
    theta: float
    y2: float
    angle: float          # angle between tangents, radians
    transverse: bool
    image: str            # 'G' or 'L'


def _graph_offsets(a: PlanarCurve, b: PlanarCurve, max_dtheta: float = 1e-3):
    """Common-window theta grid and vertical offset a - b (both curves are graphs)."""
    lo = max(a.theta[0], b.theta[0])
    hi = min(a.theta[-1], b.theta[-1])
    if hi <= lo:
        return None, None
    n = max(16, int(math.ceil((hi - lo) / max_dtheta)))
    grid = np.linspace(lo, hi, n + 1)
    return grid, a.y2_at(grid) - b.y2_at(grid)


def _crossings_of(a: PlanarCurve, b: PlanarCurve, tag: str,
                  max_dtheta: float = 1e-3, angle_tol: float = 1e-3):
    grid, d = _graph_offsets(a, b, max_dtheta)
    out = []
    if grid is None:
        return out
    sign_change = d[:-1] * d[1:] < 0.0
    for i in np.flatnonzero(sign_change):
        t0, t1 = grid[i], grid[i + 1]
        # exact crossing of the two local segments (linear in theta)
        frac = d[i] / (d[i] - d[i + 1])
        th = t0 + frac * (t1 - t0)
        y2 = float(a.y2_at(th))
        sa = (a.y2_at(t1) - a.y2_at(t0)) / (t1 - t0)
        sb = (b.y2_at(t1) - b.y2_at(t0)) / (t1 - t0)
        ang = abs(math.atan(sa) - math.atan(sb))
        out.append(Crossing(float(th), y2, ang, ang > angle_tol, tag))
    return out


def intersections_gamma_plus_image(params: ModelParams, max_dtheta: float = 1e-3,
                                   curves=None) -> list[Crossing]:
    """All crossings of gamma_plus with the G- and L-images of gamma_tilde_minus."""
    if curves is None:
        gamma_p, _ = compute_canard(params, "plus", max_dtheta=max_dtheta)
        gG, gL = canard_image_curves(params, max_dtheta=max_dtheta)
    else:
        gamma_p, gG, gL = curves
    hits = _crossings_of(gamma_p, gG, "G", max_dtheta)
    hits += _crossings_of(gamma_p, gL, "L", max_dtheta)
    hits.sort(key=lambda c: c.theta)
    return hits


def _min_offset_to_G_image(params: ModelParams, max_dtheta: float = 5e-4) -> float:
    gamma_p, _ = compute_canard(params, "plus", max_dtheta=max_dtheta)
    gG, _ = canard_image_curves(params, max_dtheta=max_dtheta)
    grid, d = _graph_offsets(gamma_p, gG, max_dtheta)
    if grid is None:
        raise CanardMissesSection(f"curves do not overlap at xi={params.xi}")
    return float(np.min(d))


def find_xi_t(params: ModelParams, bracket, tol: float = 1e-5) -> float:
    """Tangency rate of gamma_plus with the G-image of the canard.

    Bisection on the signed extremal vertical offset between the two graphs;
    the offset is one-signed on the no-crossing side of the bracket and dips
    through zero where the two transverse crossings are born.
    """
    lo, hi = bracket
    s_lo = _min_offset_to_G_image(params.with_(xi=lo))
    s_hi = _min_offset_to_G_image(params.with_(xi=hi))
    if s_lo * s_hi > 0.0:
        raise BracketError(
            f"no tangency in [{lo}, {hi}]: offsets {s_lo:.3e}, {s_hi:.3e}")
    return bisect_root(lambda xi: _min_offset_to_G_image(params.with_(xi=xi)),
                       (lo, hi), tol=tol)


# ---------------------------------------------------------------------------
# Hamiltonian limit and the contraction integral
# ---------------------------------------------------------------------------

def hamiltonian(params: ModelParams, point):
    """Conserved quantity of the xi -> inf reduced flow: mu_d phi(y2) + sin(theta)."""
    y2, theta = point
    return params.mu_d * params.phi(y2) + np.sin(theta)


def a6_integral(params: ModelParams, m, theta_range, tol: float = 1e-8) -> float:
    """Contraction balance along a slow graph: integral of lambda(m(s)) ds.

    ``m`` is a callable slow graph (see SingularCycle.m); the composite
    trapezoid rule is refined by doubling until successive estimates agree
    to ``tol``.
    """
    a, b = float(theta_range[0]), float(theta_range[1])
    if not b > a:
        raise ValueError(f"empty integration range [{a}, {b}]")

    def est(n):
        s = np.linspace(a, b, n + 1)
        vals = model.layer_eigenvalue(params, np.asarray(m(s)))
        return float(np.trapezoid(vals, s))

    n = 256
    prev = est(n)
    for _ in range(14):
        n *= 2
        cur = est(n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    return prev
