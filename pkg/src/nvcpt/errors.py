"""Exception types shared across the package."""


class NVError(Exception):
    """Base class for all package errors."""


class ConvergenceError(NVError):
    """An iterative solver hit its iteration cap without converging."""


class StepSizeError(NVError):
    """The integrator step is too coarse for the requested accuracy."""


class LabelError(NVError):
    """An eigensystem is unlabeled or its labels are inconsistent."""


class UnderdeterminedError(NVError, ValueError):
    """Not enough data to determine the requested parameters."""


class NoPeaksError(NVError, ValueError):
    """Peak detection found nothing above the noise floor."""


class NoDipError(NVError, ValueError):
    """No CPT dip was found in a two-tone scan."""


class InsufficientExtremaError(NVError, ValueError):
    """Too few wing-modulation extrema to estimate a period."""


class InvariantError(NVError):
    """An internal consistency check failed."""
