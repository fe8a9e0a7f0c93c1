"""stictionlab: numerics for a regularized stiction friction oscillator
under slow forcing.

The library covers the singular (eps = 0) geometry on the critical manifold
(folded saddles, canards, fold-jump return maps, critical forcing rates),
the singular stroboscopic half map and its fixed points, the eps > 0 half
map with Newton shooting, Floquet multipliers and continuation in the
forcing rate, and transient-chaos diagnostics for the canard-induced
horseshoe.
"""

from .errors import (
    BracketError,
    CanardMissesSection,
    EscapeError,
    FunnelEncountered,
    HitFoldedSaddle,
    MaxStepsExceeded,
    NewtonError,
    NoFoldedSingularities,
    StictionLabError,
    StiffnessError,
)
from .geometry import (
    FoldedSingularity,
    PlanarCurve,
    ThetaInterval,
    a6_integral,
    canard_image_curves,
    compute_canard,
    find_xi_pd,
    find_xi_t,
    folded_saddles,
    folded_singularities,
    hamiltonian,
    intersections_gamma_plus_image,
    jump_set_J,
    map_G,
    map_L,
    theta_minus,
    theta_upsilon,
    xi_dn,
    y2_minus,
)
from .model import (
    AssumptionReport,
    ModelParams,
    Regularization,
    apply_symmetry,
    full_field,
    layer_eigenvalue,
    layer_field,
    make_standard_phi,
    make_tanh_phi,
    manifold_x,
    reduced_desing_field,
    scaled_slow_field,
    sheet_of,
    verify_assumptions,
)
from .ode import EventSpec, Trajectory, bisect_root, integrate, newton_solve
from .return_map import (
    Itinerary,
    SingularCycle,
    classify_singular_cycle,
    cycle_from_R0_fixed_point,
    find_R0_fixed_points,
    singular_cycles_from_canard,
    singular_half_map_R0,
    y2_canard_section,
)
from .strobe import (
    BifurcationDiagram,
    LimitCycle,
    continue_branch,
    escape_profile,
    find_limit_cycle,
    half_map_Q,
    half_map_R,
    horseshoe_evidence,
    r_eps_vs_r0,
    simulate,
)

__version__ = "0.1.0"
