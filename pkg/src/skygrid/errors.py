"""Exception hierarchy shared across the package."""


class SkyGridError(Exception):
    """Base class for all package errors."""


# Grid / geometry

class OutOfBounds(SkyGridError):
    """A point or cell lies outside the gridded volume."""


class InvalidIndex(SkyGridError):
    """A cell index does not address a cell of the grid."""


# Corridors

class EmptyPath(SkyGridError):
    """A corridor was given no cells."""


class Discontiguous(SkyGridError):
    """Consecutive corridor cells are not grid neighbors."""


class RestrictedOverlap(SkyGridError):
    """A corridor cell center lies inside a no-fly zone."""


class RadiiNotAscending(SkyGridError):
    """Ring loop radii must be strictly ascending."""


class NoRoute(SkyGridError):
    """No corridor sequence connects the requested endpoints."""


class UnknownCorridor(SkyGridError):
    """A corridor id does not resolve."""


# Envelopes / conflicts

class SameAircraft(SkyGridError):
    """Pairwise operation invoked with a single aircraft."""


# Link budget / tracking

class NonPositiveInput(SkyGridError):
    """Frequency, power, bandwidth, or distance must be positive."""


class NonPSDCovariance(SkyGridError):
    """Track covariance is not positive semi-definite."""


class NoModesConfigured(SkyGridError):
    """Mode selection requires at least one configured link mode."""


# Evaluation

class NotReciprocal(SkyGridError):
    """Pairwise comparison matrix violates the reciprocal property."""


class DimensionMismatch(SkyGridError):
    """Weight vector length does not match the indicator layout."""


class InconsistentJudgments(SkyGridError):
    """Comparison matrix consistency ratio exceeds the acceptance bound.

    Never raised by ahp_weights itself (results are returned flagged); kept
    for callers that want to escalate the flag.
    """


class EmptyLog(SkyGridError):
    """Indicator construction needs at least one completed tick."""


# Avoidance

class NoFeasibleManeuver(SkyGridError):
    """No bounded single-aircraft maneuver clears the conflict."""


class NonConvergence(SkyGridError):
    """Cluster coordination failed to settle within the iteration cap."""


class Unplannable(SkyGridError):
    """No conflict-free plan exists within the delay budget."""


class MisalignedTrajectories(SkyGridError):
    """Trajectories passed to the probability estimator share no common time base."""


# Harness

class InvalidScenario(SkyGridError):
    """Scenario configuration failed validation; message carries field paths."""
