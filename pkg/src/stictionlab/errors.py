"""Exception types shared across the library."""


class StictionLabError(Exception):
    """Base class for all library errors."""


class StiffnessError(StictionLabError):
    """Step size underflowed; the problem is too stiff for the explicit pair.

    Carries the last accepted time and state so callers can inspect where
    the integration died.
    """

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class MaxStepsExceeded(StictionLabError):
    """Integration exceeded the configured step budget."""


class BracketError(StictionLabError):
    """A root bracket was invalid or contained no sign change."""


class NewtonError(StictionLabError):
    """Newton iteration failed (no convergence or singular Jacobian)."""


class NoFoldedSingularities(StictionLabError):
    """xi <= delta: fold bifurcation of folded singularities, none exist."""


class CanardMissesSection(StictionLabError):
    """The backward canard orbit never meets the section admissibly."""


class HitFoldedSaddle(StictionLabError):
    """A singular-map arc terminated on a folded saddle (map discontinuity)."""


class FunnelEncountered(StictionLabError):
    """A singular-map arc entered the funnel of a folded node/focus."""


class EscapeError(StictionLabError):
    """A stroboscopic trajectory left the configured phase-space window."""
