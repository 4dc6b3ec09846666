"""Exception types shared across the package."""

from __future__ import annotations


class RapdetError(Exception):
    """Base class for rapdet-specific failures."""


class TraceFormatError(RapdetError):
    """A trace/fingerprint/registry file failed to parse or validate."""


class TooFewAps(RapdetError):
    """Fewer APs available than the minimum subset size requires."""


class SubsetTooSmall(RapdetError):
    """A positioning call received fewer APs than the solver needs."""


class ApNotInRegistry(RapdetError):
    """A subset references an AP without a surveyed position."""


class AllScoresZero(RapdetError):
    """A fingerprint query shares no AP with any database entry."""


class AllSubsetsFailed(RapdetError):
    """Every subset at a timestep failed to produce a position."""


class EmptyMixture(RapdetError):
    """Fusion was asked to combine zero position estimates."""


class WindowTooLarge(RapdetError):
    """A sliding-window detector was given a trace shorter than its window."""


class NonMonotoneDetector(RapdetError):
    """Benign alarm fraction did not move monotonically with the knob."""


class CalibrationError(RapdetError):
    """No knob value inside the search bounds satisfies the FPR target."""
