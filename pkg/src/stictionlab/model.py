"""Model definition: parameters, regularization family, vector fields, symmetry.

The oscillator is

    x' = y,   y' = -x - sin(theta) - mu_d * phi(y / eps),   theta' = eps * xi,

where ``phi`` is a smooth regularization of the stiction law: odd, saturating
at +-1, with a single interior maximum ``phi(delta) = mu_s/mu_d > 1`` of the
increasing branch.  All vector fields used by the geometric analysis (scaled
slow/fast forms, layer problem, desingularized reduced flow) live here, as
does the half-period symmetry ``S: (x, y, theta) -> (-x, -y, theta + pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ModelParams",
    "Regularization",
    "AssumptionReport",
    "make_standard_phi",
    "make_tanh_phi",
    "verify_assumptions",
    "full_field",
    "scaled_slow_field",
    "layer_field",
    "reduced_field",
    "reduced_desing_field",
    "layer_eigenvalue",
    "manifold_x",
    "sheet_of",
    "apply_symmetry_phase",
    "apply_symmetry_reduced",
]


@dataclass(frozen=True)
class Regularization:
    """Evaluatable regularization function with analytic derivatives.

    ``eval``/``deriv``/``deriv2`` must be vectorized over numpy arrays.
    ``meta`` describes the family; for the standard family it carries the
    closed-form coefficients ``alpha``, ``beta`` and the tail exponent
    ``k = 2``.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    deriv2: Callable[[np.ndarray], np.ndarray]
    meta: dict = field(default_factory=dict)

    def __call__(self, s):
        return self.eval(s)


def make_standard_phi(delta: float, mu: float) -> Regularization:
    """Standard rational-algebraic regularization family.

        phi(s) = s/sqrt(s^2+1) * (1 + beta/(alpha + s^2))

    with closed-form coefficients

        alpha = delta^2 (2 delta^2 + 1) - 2 delta^3 sqrt(delta^2+1) / mu
        beta  = 2 delta mu (delta^2+1)^(3/2) - 4 delta^2 (delta^2+1)
                + 2 delta^3 sqrt(delta^2+1) / mu

    chosen so that phi(+-delta) = +-mu and phi'(+-delta) = 0 exactly, for any
    delta > 0 and mu > 1.  The tail exponent is k = 2.
    """
    if delta <= 0.0:
        raise ValueError(f"standard family undefined for delta={delta} (need delta > 0)")
    if mu <= 1.0:
        raise ValueError(f"standard family undefined for mu={mu} (need mu > 1)")
    c = math.sqrt(delta * delta + 1.0)
    alpha = delta**2 * (2.0 * delta**2 + 1.0) - 2.0 * delta**3 * c / mu
    beta = 2.0 * delta * mu * c**3 - 4.0 * delta**2 * (delta**2 + 1.0) + 2.0 * delta**3 * c / mu

    def _eval(s):
        s = np.asarray(s, dtype=float)
        return s / np.sqrt(s * s + 1.0) * (1.0 + beta / (alpha + s * s))

    def _deriv(s):
        s = np.asarray(s, dtype=float)
        q = s * s + 1.0
        g = s / np.sqrt(q)
        gd = q**-1.5
        h = 1.0 + beta / (alpha + s * s)
        hd = -2.0 * beta * s / (alpha + s * s) ** 2
        return gd * h + g * hd

    def _deriv2(s):
        s = np.asarray(s, dtype=float)
        q = s * s + 1.0
        g = s / np.sqrt(q)
        gd = q**-1.5
        gdd = -3.0 * s * q**-2.5
        p = alpha + s * s
        h = 1.0 + beta / p
        hd = -2.0 * beta * s / p**2
        hdd = -2.0 * beta * (alpha - 3.0 * s * s) / p**3
        return gdd * h + 2.0 * gd * hd + g * hdd

    meta = {"family": "standard", "alpha": alpha, "beta": beta, "k": 2,
            "delta": delta, "mu": mu}
    return Regularization(_eval, _deriv, _deriv2, meta)


def make_tanh_phi() -> Regularization:
    """tanh regularization (a switch without a stiction overshoot).

    Violates the stiction assumption: its derivative is positive everywhere,
    so there is no delta with phi'(delta) = 0.  Useful as the negative
    control for the assumption checks.
    """
    return Regularization(
        np.tanh,
        lambda s: 1.0 / np.cosh(np.asarray(s, dtype=float)) ** 2,
        lambda s: -2.0 * np.tanh(s) / np.cosh(np.asarray(s, dtype=float)) ** 2,
        {"family": "tanh"},
    )


@dataclass(frozen=True)
class ModelParams:
    """Model parameters and the regularization function.

    delta : half-width of the increasing branch of phi (fold location).
    mu_s, mu_d : static/dynamic friction levels, mu_s > mu_d > 0.
    xi : slow-forcing rate; the forcing frequency is omega = eps * xi.
         ``math.inf`` is accepted (Hamiltonian limit of the reduced flow).
    eps : regularization/forcing scale; 0 selects the singular limit.
    phi : regularization; defaults to the standard family at
          mu = mu_s/mu_d with the given delta.
    """

    delta: float
    mu_s: float
    mu_d: float
    xi: float
    eps: float = 0.0
    phi: Regularization | None = None

    def __post_init__(self):
        if not self.delta > 0.0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.mu_d > 0.0:
            raise ValueError(f"mu_d must be positive, got {self.mu_d}")
        if not self.mu_s > self.mu_d:
            raise ValueError(f"need mu_s > mu_d, got mu_s={self.mu_s}, mu_d={self.mu_d}")
        if not self.xi > 0.0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if self.eps < 0.0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.phi is None:
            object.__setattr__(self, "phi", make_standard_phi(self.delta, self.mu))

    @property
    def mu(self) -> float:
        """Friction ratio mu = mu_s / mu_d (> 1)."""
        return self.mu_s / self.mu_d

    @property
    def omega(self) -> float:
        """Forcing frequency omega = eps * xi."""
        return self.eps * self.xi

    @property
    def xi_inv(self) -> float:
        return 0.0 if math.isinf(self.xi) else 1.0 / self.xi

    def with_(self, **kw) -> "ModelParams":
        """Copy with some fields replaced (phi is rebuilt unless given)."""
        base = {"delta": self.delta, "mu_s": self.mu_s, "mu_d": self.mu_d,
                "xi": self.xi, "eps": self.eps}
        phi = kw.pop("phi", None)
        if phi is None and all(k not in kw for k in ("delta", "mu_s", "mu_d")):
            phi = self.phi
        base.update(kw)
        return ModelParams(phi=phi, **base)


# ---------------------------------------------------------------------------
# Vector fields.  States are plain arrays: (x, y, theta) in the original
# scale, (x, y2, theta) in the scaling chart, (y2, theta) on the critical
# manifold.  theta is kept unwrapped; reduce mod 2*pi only at sections.
# ---------------------------------------------------------------------------

def full_field(params: ModelParams, state) -> np.ndarray:
    """Original-scale field: (y, -x - sin(theta) - mu_d phi(y/eps), eps*xi)."""
    if params.eps <= 0.0:
        raise ValueError("full_field needs eps > 0; use layer/reduced fields at eps = 0")
    x, y, theta = state
    return np.array([
        y,
        -x - np.sin(theta) - params.mu_d * params.phi(y / params.eps),
        params.eps * params.xi,
    ])


def scaled_slow_field(params: ModelParams, state) -> np.ndarray:
    """Scaling-chart slow-time field: (y2, (-x - sin th - mu_d phi(y2))/eps^2, xi)."""
    if params.eps <= 0.0:
        raise ValueError("scaled_slow_field needs eps > 0")
    x, y2, theta = state
    return np.array([
        y2,
        (-x - np.sin(theta) - params.mu_d * params.phi(y2)) / params.eps**2,
        params.xi,
    ])


def layer_field(params: ModelParams, state) -> np.ndarray:
    """Layer (fast) problem: only y2 moves, x and theta frozen."""
    x, y2, theta = state
    return np.array([0.0, -x - np.sin(theta) - params.mu_d * params.phi(y2), 0.0])


def reduced_field(params: ModelParams, point) -> np.ndarray:
    """Reduced flow on the critical manifold in (y2, theta), slow time.

    Singular on the fold lines (divides by phi'(y2)); prefer
    ``reduced_desing_field`` for anything that goes near a fold.
    """
    y2, theta = point
    return np.array([
        (-y2 - params.xi * np.cos(theta)) / (params.mu_d * params.phi.deriv(y2)),
        params.xi,
    ])


def reduced_desing_field(params: ModelParams, point) -> np.ndarray:
    """Desingularized reduced flow: (-y2/xi - cos(theta), mu_d phi'(y2)).

    Orientation matches the reduced flow on the attracting sheet and is
    reversed on the repelling sheets.  xi = inf gives the Hamiltonian limit.
    """
    y2, theta = point
    return np.array([
        -params.xi_inv * y2 - np.cos(theta),
        params.mu_d * params.phi.deriv(y2),
    ])


def reduced_desing_jacobian(params: ModelParams, point) -> np.ndarray:
    """Jacobian of the desingularized reduced flow at (y2, theta)."""
    y2, theta = point
    return np.array([
        [-params.xi_inv, np.sin(theta)],
        [params.mu_d * params.phi.deriv2(y2), 0.0],
    ])


def layer_eigenvalue(params: ModelParams, y2):
    """Nontrivial eigenvalue of the layer problem on C: lambda = -mu_d phi'(y2)."""
    return -params.mu_d * params.phi.deriv(y2)


def manifold_x(params: ModelParams, point):
    """x-coordinate of the critical manifold: x = -sin(theta) - mu_d phi(y2)."""
    y2, theta = point
    return -np.sin(theta) - params.mu_d * params.phi(y2)


def sheet_of(params: ModelParams, y2, tol: float = 0.0) -> str:
    """Classify a y2-value by critical-manifold sheet."""
    if abs(abs(y2) - params.delta) <= tol:
        return "fold"
    if abs(y2) < params.delta:
        return "attracting"
    return "repelling+" if y2 > 0 else "repelling-"


def apply_symmetry_phase(state) -> np.ndarray:
    """S on 3-component states: (x, y_or_y2, theta) -> (-x, -y, theta + pi)."""
    x, y, theta = state
    return np.array([-x, -y, theta + np.pi])


def apply_symmetry_reduced(point) -> np.ndarray:
    """S on the critical manifold: (y2, theta) -> (-y2, theta + pi)."""
    y2, theta = point
    return np.array([-y2, theta + np.pi])


def apply_symmetry(state) -> np.ndarray:
    """S on either a 3-component state or a reduced (y2, theta) point."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] == 2:
        return apply_symmetry_reduced(state)
    return apply_symmetry_phase(state)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    """Pass/fail record of the four structural assumptions on phi."""

    odd: bool                 # phi(-s) = -phi(s) on a sampled grid
    sign_pattern: bool        # phi' > 0 exactly on (-delta, delta)
    boundary: bool            # phi(delta) = mu, phi'(delta) = 0, phi''(delta) < 0
    saturation: bool          # phi(+-S) -> +-1 for large S
    tail: bool                # |phi(-1/s) + 1| ~ s^k on a log-log fit
    tail_exponent: float | None
    details: dict

    @property
    def all_pass(self) -> bool:
        return self.odd and self.sign_pattern and self.boundary and self.saturation and self.tail


def verify_assumptions(phi: Regularization, params: ModelParams, tol: float = 1e-8) -> AssumptionReport:
    """Check the structural assumptions on a regularization function.

    Oddness and the phi' sign pattern are sampled on |s| <= max(10, 10*delta);
    saturation at S in {1e3, 1e6}; the tail is a log-log slope fit of
    |phi(-1/s) + 1| over s in [1e-3, 1e-1], passing when the slope is within
    +-0.1 of the family's nominal exponent (k = 2 for the standard family).
    Failures are recorded, never raised.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    delta, mu = params.delta, params.mu
    details: dict = {}

    span = max(10.0, 10.0 * delta)
    grid = np.linspace(1e-9, span, 4001)
    odd_err = float(np.max(np.abs(phi(-grid) + phi(grid))))
    details["odd_error"] = odd_err
    odd_ok = odd_err <= tol

    # phi' sign pattern: strictly positive inside (-delta, delta), negative outside,
    # with margins off the folds where phi' legitimately vanishes.
    inner = np.linspace(-delta * 0.999, delta * 0.999, 1001)
    pad = max(1e-3, 1e-3 * delta)
    outer = np.concatenate([
        np.linspace(delta + pad, span, 1001),
        np.linspace(-span, -delta - pad, 1001),
    ])
    dp_in = phi.deriv(inner)
    dp_out = phi.deriv(outer)
    details["min_phi_prime_inside"] = float(np.min(dp_in))
    details["max_phi_prime_outside"] = float(np.max(dp_out))
    sign_ok = bool(np.all(dp_in > 0.0) and np.all(dp_out < 0.0))

    bval = float(phi(delta)) - mu
    bder = float(phi.deriv(delta))
    bcurv = float(phi.deriv2(delta))
    details["phi_at_delta_minus_mu"] = bval
    details["phi_prime_at_delta"] = bder
    details["phi_second_at_delta"] = bcurv
    boundary_ok = abs(bval) <= tol and abs(bder) <= tol and bcurv < 0.0

    sat_err = max(abs(float(phi(1e3)) - 1.0), abs(float(phi(-1e3)) + 1.0),
                  abs(float(phi(1e6)) - 1.0), abs(float(phi(-1e6)) + 1.0))
    details["saturation_error"] = sat_err
    saturation_ok = sat_err <= 1e-4

    k_nominal = phi.meta.get("k", 2)
    s = np.geomspace(1e-3, 1e-1, 40)
    tail_vals = np.abs(np.asarray(phi(-1.0 / s), dtype=float) + 1.0)
    good = tail_vals > 0.0
    if good.sum() >= 10:
        slope = float(np.polyfit(np.log(s[good]), np.log(tail_vals[good]), 1)[0])
        tail_ok = abs(slope - k_nominal) <= 0.1
    else:
        slope = None
        tail_ok = False
    details["tail_slope"] = slope
    details["tail_exponent_nominal"] = k_nominal

    return AssumptionReport(odd_ok, sign_ok, boundary_ok, saturation_ok, tail_ok, slope, details)
