"""The eps = 0 stroboscopic half-map on the attracting sheet and the
singular cycles it generates.

The half map flows a point of the attracting sheet forward by a half period
in theta, applying the fold-jump map G at every regular jump-arc hit, and
finishes with the half-period symmetry.  Its fixed points seed the
stick-slip and pure-stick limit cycles; the canard crossings from the
geometry module seed the canard cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import FunnelEncountered, HitFoldedSaddle, StictionLabError
from .geometry import PlanarCurve, compute_canard,intersections_gamma_plus_image, map_G, theta_minus, y2_minus
from .model import ModelParams
from .ode import EventSpec, bisect_root, integrate

__all__ = [
    "Jump", "Itinerary", "SingularCycle",
    "singular_half_map_R0", "y2_canard_section", "find_R0_fixed_points",
    "cycle_from_R0_fixed_point", "singular_cycles_from_canard",
    "classify_singular_cycle",
]

_SADDLE_TOL = 1e-8       # fold hits this close (in theta) to a saddle are flagged
_FUNNEL_RADIUS = 0.1     # stalled arcs this close to a non-saddle are funnels


@dataclass(frozen=True)
class Jump:
    theta: float
    y2_from: float
    y2_to: float
    mechanism: str        # 'G-', 'G+', 'L-', 'L+'


@dataclass
class Itinerary:
    """Alternating slow arcs and jumps of one half-map evaluation."""

    theta_start: float
    y2_start: float
    theta_end: float
    y2_end: float         # before the final symmetry
    arcs: list            # list of (theta_array, y2_array)
    jumps: list           # list of Jump

    @property
    def signature(self) -> tuple:
        return tuple(j.mechanism for j in self.jumps)


def _nearest_singularity_info(params, y2, theta):
    """(kind, distance-in-theta) of the nearest folded singularity on this fold."""
    thm = theta_minus(params)
    if y2 < 0:
        saddle_th, other_th = thm, -thm
    else:
        saddle_th, other_th = thm + np.pi, np.pi - thm
    d_saddle = abs((theta - saddle_th + np.pi) % (2.0 * np.pi) - np.pi)
    d_other = abs((theta - other_th + np.pi) % (2.0 * np.pi) - np.pi)
    return ("saddle", d_saddle) if d_saddle <= d_other else ("other", d_other)


def singular_half_map_R0(params: ModelParams, theta_star: float, y2: float,
                         keep_arcs: bool = False, max_jumps: int = 40,
                         tols=(1e-11, 1e-13)):
    """One evaluation of the singular half map.  Returns (y2_out, Itinerary).

    Flows (y2, theta_star) on the attracting sheet until theta_star + pi,
    applying G at every regular fold hit, then reflects y2 (the symmetry).
    Arcs that terminate on a folded saddle raise HitFoldedSaddle (the map's
    discontinuity set); arcs that stall in the funnel of a folded node/focus
    raise FunnelEncountered.
    """
    if abs(y2) >= params.delta:
        raise ValueError(f"R0 needs a point on the attracting sheet, got y2={y2}")
    geometry.theta_minus(params)    # raises below xi = delta only if saddles are needed later
    theta_end = theta_star + np.pi
    th = float(theta_star)
    arcs: list = []
    jumps: list[Jump] = []
    fld = lambda t, u: np.array([
        -params.xi_inv * u[0] - math.cos(u[1]),
        params.mu_d * float(params.phi.deriv(u[0])),
    ])
    for _ in range(max_jumps + 1):
        events = [
            EventSpec(lambda t, u: u[1] - theta_end, terminal=True),
            EventSpec(lambda t, u: u[0] + params.delta, terminal=True),
            EventSpec(lambda t, u: u[0] - params.delta, terminal=True),
        ]
        traj, hits = integrate(fld, (y2, th), (0.0, 4000.0), tols=tols,
                               events=events, max_step=0.25)
        if keep_arcs:
            arcs.append((traj.states[:, 1].copy(), traj.states[:, 0].copy()))
        if not hits:
            kind, dist = _nearest_singularity_info(params, traj.end_state[0], traj.end_state[1])
            if kind == "saddle" and dist < _FUNNEL_RADIUS:
                raise HitFoldedSaddle(
                    f"arc stalled at the folded saddle near theta={traj.end_state[1]:.6f}")
            if dist < _FUNNEL_RADIUS:
                raise FunnelEncountered(
                    f"arc entered a folded-{kind} funnel near theta={traj.end_state[1]:.6f}")
            raise StictionLabError("reduced flow stalled away from any folded singularity")
        hit = hits[0]
        if hit.index == 0:
            y2_end = float(hit.state[0])
            it = Itinerary(theta_star, float(y2), theta_end, y2_end, arcs, jumps)
            return -y2_end, it
        # fold hit: regular jump, saddle, or funnel endpoint
        y2_hit, th_hit = float(hit.state[0]), float(hit.state[1])
        kind, dist = _nearest_singularity_info(params, y2_hit, th_hit)
        if dist <= _SADDLE_TOL:
            if kind == "saddle":
                raise HitFoldedSaddle(
                    f"arc reached the folded saddle at theta={th_hit:.9f} (R0 discontinuity)")
            raise FunnelEncountered(
                f"arc reached a non-saddle folded singularity at theta={th_hit:.9f}")
        side = "minus" if hit.index == 1 else "plus"
        fold_y2 = -params.delta if side == "minus" else params.delta
        target = map_G(params, side, (fold_y2, th_hit))
        jumps.append(Jump(th_hit, fold_y2, float(target[0]), "G-" if side == "minus" else "G+"))
        y2, th = float(target[0]), th_hit
    raise StictionLabError(f"more than {max_jumps} jumps in one half period")


def y2_canard_section(params: ModelParams, theta_star: float) -> float:
    """y2-value where the minus canard first crosses the section theta = theta_star.

    Obtained by flowing the local stable direction of the folded saddle
    backward on the attracting sheet; this is the half-map's discontinuity
    point on the section.
    """
    zm, _ = geometry.folded_saddles(params)
    if theta_star >= zm.theta:
        raise ValueError(f"section theta={theta_star} not below the saddle at {zm.theta}")
    v = geometry._stable_direction(params, zm)
    if v[0] < 0.0:
        v = -v
    seed = zm.point + 1e-6 * v
    fld = lambda t, u: np.array([
        -params.xi_inv * u[0] - math.cos(u[1]),
        params.mu_d * float(params.phi.deriv(u[0])),
    ])
    events = [
        EventSpec(lambda t, u: u[1] - theta_star, terminal=True),
        EventSpec(lambda t, u: u[0] + params.delta, terminal=True),
        EventSpec(lambda t, u: u[0] - params.delta, terminal=True),
    ]
    traj, hits = integrate(fld, seed, (0.0, -4000.0), tols=(1e-12, 1e-14),
                           events=events, max_step=0.25)
    if not hits or hits[0].index != 0:
        raise StictionLabError(
            f"canard leaves the attracting sheet before reaching theta={theta_star}")
    return float(hits[0].state[0])


def find_R0_fixed_points(params: ModelParams, theta_star: float, search_interval,
                         n_scan: int = 41, tol: float = 1e-10):
    """Fixed points of the half map on a search interval.

    Scans V(y2) = R0(y2) - y2, brackets sign changes between samples with the
    same jump signature, bisects to ``tol``, and attaches a central-difference
    stability slope.  Returns a list of (y2_star, slope, itinerary).
    """
    lo, hi = search_interval
    grid = np.linspace(lo, hi, n_scan)
    vals, sigs = [], []
    for y in grid:
        try:
            out, it = singular_half_map_R0(params, theta_star, float(y))
            vals.append(out - y)
            sigs.append(it.signature)
        except (HitFoldedSaddle, FunnelEncountered):
            vals.append(np.nan)
            sigs.append(None)
    results = []
    R0 = lambda y: singular_half_map_R0(params, theta_star, y)[0]
    for i in range(n_scan - 1):
        a, b = vals[i], vals[i + 1]
        if np.isnan(a) or np.isnan(b) or sigs[i] != sigs[i + 1]:
            continue
        if a == 0.0 or a * b < 0.0:
            y_star = bisect_root(lambda y: R0(y) - y, (grid[i], grid[i + 1]), tol=tol)
            h = 1e-6
            slope = (R0(y_star + h) - R0(y_star - h)) / (2.0 * h)
            _, it = singular_half_map_R0(params, theta_star, y_star, keep_arcs=True)
            results.append((float(y_star), float(slope), it))
    return results


# ---------------------------------------------------------------------------
# Singular cycles
# ---------------------------------------------------------------------------

@dataclass
class SingularCycle:
    """A symmetric eps = 0 cycle stored as one half-period slow graph.

    The half graph spans [theta_start, theta_start + pi]; the other half is
    its symmetry image, so the full slow graph is m(theta + pi) = -m(theta).
    """

    theta_start: float
    arcs: list                       # list of (theta_array, y2_array, sheet)
    jumps: list                      # list of Jump (within the stored half)
    classification: str
    role: str | None = None          # 'Gamma_ss' | 'Gamma_ps' | 'Gamma_ssc' | 'Gamma_c'
    closure_error: float = 0.0
    _grid: tuple = field(default=None, repr=False)

    def _graph(self):
        if self._grid is None:
            th = np.concatenate([a[0] for a in self.arcs])
            y2 = np.concatenate([a[1] for a in self.arcs])
            order = np.argsort(th)
            object.__setattr__(self, "_grid", (th[order], y2[order]))
        return self._grid

    @property
    def theta_jumps(self) -> list[float]:
        return [j.theta for j in self.jumps]

    def m(self, theta):
        """Slow graph with half-period antisymmetric extension."""
        th, y2 = self._graph()
        t = np.asarray(theta, dtype=float)
        k = np.floor((t - self.theta_start) / np.pi)
        base = t - k * np.pi
        vals = np.interp(base, th, y2)
        out = np.where(k % 2 == 0, vals, -vals)
        return float(out) if np.isscalar(theta) else out

    @property
    def has_canard(self) -> bool:
        return any(a[2] == "repelling" for a in self.arcs)

    def jumps_in(self, lo: float, hi: float):
        """Jump angles inside (lo, hi] with falling sides, periodized.

        Shifting by an odd multiple of the half period flips the cycle onto
        its symmetric copy, so the falling side flips too.
        """
        out = []
        for j in self.jumps:
            side = -1.0 if j.mechanism in ("G-", "L-") else 1.0
            k0 = int(math.floor((lo - j.theta) / np.pi)) - 1
            k1 = k0 + int(math.ceil((hi - lo) / np.pi)) + 3
            for k in range(k0, k1):
                t = j.theta + k * np.pi
                if lo < t <= hi:
                    out.append((t, side if k % 2 == 0 else -side))
        return sorted(out)


def classify_singular_cycle(cycle: SingularCycle) -> str:
    """Mechanism-based tag: pure-stick / stick-slip / canard variants."""
    if not cycle.jumps:
        return "pure-stick"
    if not cycle.has_canard:
        return "stick-slip"
    routes = {j.mechanism[0] for j in cycle.jumps}
    return "stick-slip-canard" if "G" in routes else "pure-stick-canard"


def cycle_from_R0_fixed_point(params: ModelParams, theta_star: float, y2_star: float,
                              role: str | None = None) -> SingularCycle:
    """Assemble the symmetric singular cycle through a half-map fixed point."""
    _, it = singular_half_map_R0(params, theta_star, y2_star, keep_arcs=True)
    arcs = [(th, y2, "attracting") for th, y2 in it.arcs]
    closure = abs(-it.y2_end - y2_star)
    cls = "pure-stick" if not it.jumps else "stick-slip"
    if role is None:
        role = "Gamma_ps" if cls == "pure-stick" else "Gamma_ss"
    return SingularCycle(theta_star, arcs, list(it.jumps), cls, role, closure)


def _restrict(curve: PlanarCurve, lo: float, hi: float):
    """Graph nodes of a curve on [lo, hi], with exact interpolated endpoints."""
    mask = (curve.theta > lo) & (curve.theta < hi)
    th = np.concatenate([[lo], curve.theta[mask], [hi]])
    y2 = np.concatenate([[curve.y2_at(lo)], curve.y2[mask], [curve.y2_at(hi)]])
    return th, y2


def singular_cycles_from_canard(params: ModelParams, max_dtheta: float = 1e-3,
                                transverse_only: bool = True) -> list[SingularCycle]:
    """Symmetric singular cycles through the folded saddles, one per crossing
    of gamma_plus with an image of the repelling canard branch.

    With two crossings the earlier-jumping cycle is the stick-slip-with-canard
    skeleton and the later one the canard skeleton (theta_2 > theta_1).
    """
    gamma_m, gamma_tilde = compute_canard(params, "minus", max_dtheta=max_dtheta)
    sym = lambda y2, th: (-y2, th + np.pi)
    gamma_p = gamma_m.mapped(sym, "gamma_plus")
    gG, gL = geometry.canard_image_curves(params, gamma_tilde, max_dtheta=max_dtheta)
    crossings = intersections_gamma_plus_image(params, max_dtheta, curves=(gamma_p, gG, gL))
    if transverse_only:
        crossings = [c for c in crossings if c.transverse]
    thm = theta_minus(params)
    cycles = []
    for c in crossings:
        th_x = c.theta
        y2_src = float(gamma_tilde.y2_at(th_x))
        side = "minus"
        mech = "G-" if c.image == "G" else "L-"
        if c.image == "G":
            landing = float(map_G(params, side, (y2_src, th_x))[0])
        else:
            landing = float(geometry.map_L(params, side, (y2_src, th_x))[0])
        closure = abs(landing - float(gamma_p.y2_at(th_x)))
        th_a, y2_a = _restrict(gamma_m, th_x - np.pi, thm)
        th_r, y2_r = _restrict(gamma_tilde, thm, th_x)
        arcs = [(th_a, y2_a, "attracting"), (th_r, y2_r, "repelling")]
        jumps = [Jump(th_x, y2_src, landing, mech)]
        cls = "stick-slip-canard" if c.image == "G" else "pure-stick-canard"
        cycles.append(SingularCycle(th_x - np.pi, arcs, jumps, cls, None, closure))
    cycles.sort(key=lambda cy: cy.jumps[0].theta)
    for cy in cycles:
        cy.role = "Gamma_ssc"
    if cycles:
        cycles[-1].role = "Gamma_c"
        cycles[-1].classification = "canard-" + cycles[-1].jumps[0].mechanism[0]
    return cycles
