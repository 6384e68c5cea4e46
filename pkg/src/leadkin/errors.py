"""Exception hierarchy shared across the pipeline.

Two branches matter for the CLI: ``InputError`` maps to exit code 2,
``NumericalError`` to exit code 3.
"""


class LeadkinError(Exception):
    """Base class for all errors raised by this package."""


class InputError(LeadkinError):
    """Malformed or missing input data."""


class NumericalError(LeadkinError):
    """A numerical procedure failed (fit, model build, sampling)."""


# --- ingest ---------------------------------------------------------------

class MalformedRow(InputError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateTimestamp(InputError):
    def __init__(self, event_id: str, t: float):
        super().__init__(f"event {event_id!r}: duplicate timestamp t={t}")
        self.event_id = event_id
        self.t = t


class UnknownGroup(InputError):
    def __init__(self, line_no: int, label: str):
        super().__init__(f"line {line_no}: unknown group label {label!r}")
        self.label = label


class InvalidSampleRate(InputError):
    def __init__(self, event_id: str, rate: float):
        super().__init__(
            f"event {event_id!r}: sample rate {rate:.3g} Hz below the 5 Hz minimum"
        )
        self.event_id = event_id
        self.rate = rate


class EmptyWindow(InputError):
    def __init__(self, event_id: str):
        super().__init__(f"event {event_id!r}: no samples left inside the modeling window")
        self.event_id = event_id


# --- fitting --------------------------------------------------------------

class FitDiverged(NumericalError):
    """No restart converged for a breakpoint count."""


class EmptyCandidates(NumericalError):
    """Model selection received no candidate fits."""


# --- combination ----------------------------------------------------------

class EmptyGroup(InputError):
    def __init__(self, group: str):
        super().__init__(f"required source group {group!r} has no events")
        self.group = group


class DegenerateSplit(NumericalError):
    """A speed-split branch has zero total weight but a positive target size."""


class ZeroVariance(NumericalError):
    """A statistic requires nonzero variance in every dimension."""


# --- distribution modeling ------------------------------------------------

class AllFitsFailed(NumericalError):
    """Every candidate distribution family failed to fit."""


class ModelBuildFailed(NumericalError):
    """A sub-dataset model could not be built."""


# --- generation -----------------------------------------------------------

class RejectionCapExceeded(NumericalError):
    def __init__(self, bundle_id: str, dominant_reason: str, drawn: int, accepted: int):
        super().__init__(
            f"bundle {bundle_id!r}: rejection sampling cap hit after {drawn} draws "
            f"({accepted} accepted); dominant rejection reason: {dominant_reason}"
        )
        self.bundle_id = bundle_id
        self.dominant_reason = dominant_reason


# --- validation -----------------------------------------------------------

class EmptyInput(InputError):
    """An operation received an empty sample or zero total weight."""


class EmptyReps(InputError):
    """Bootstrap called with no repetitions."""
