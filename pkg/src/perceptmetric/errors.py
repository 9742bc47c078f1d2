"""Exception types shared across the toolkit."""


class PerceptMetricError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(PerceptMetricError):
    """Invalid shapes, layer schedules, or option combinations."""


class InputError(PerceptMetricError):
    """Malformed or unusable input data (signals, spectra, matrices)."""


class DataError(PerceptMetricError):
    """Unsatisfiable sampling or split requests, degenerate metrics."""


class UsageError(PerceptMetricError):
    """API called out of order (e.g. backward before forward)."""


class TrainingError(PerceptMetricError):
    """Training aborted: non-finite loss or gradients."""


class ModelFileError(PerceptMetricError):
    """Model file missing, corrupted, or of an incompatible version."""
