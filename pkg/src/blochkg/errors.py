"""Exception types shared across the toolkit."""


class BlochKGError(Exception):
    """Base class for all toolkit errors."""


class IntegrationDiverged(BlochKGError):
    """ODE error estimate exceeded tolerance after maximum refinement."""


class EdgePairingFailed(BlochKGError):
    """Band-edge root count has inconsistent parity (integration tolerance too loose)."""


class NonMonotonic(BlochKGError):
    """Discriminant derivative changed sign inside an open band."""


class TooCloseToEdge(BlochKGError):
    """Derivative evaluation requested inside the band-edge exclusion collar."""


class DegenerateFloquet(BlochKGError):
    """Both Floquet coefficient formulas are ill-conditioned (k too near an edge)."""


class NonMonotonePhase(BlochKGError):
    """Phase velocity observed non-monotone on a bracket; mass may be near the degenerate set."""


class HypothesisViolated(BlochKGError):
    """A certified-bound hypothesis (e.g. monotonicity for first-order phases) is not met."""


class BudgetExceeded(BlochKGError):
    """Oscillatory quadrature panel count exceeded the configured maximum."""


class DegenerateMassWarning(UserWarning):
    """The requested mass lies within the safety margin of a degenerate-set candidate."""
