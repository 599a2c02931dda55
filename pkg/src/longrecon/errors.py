"""Exception types shared across the package.

The CLI maps these onto exit codes (configuration 2, data 3, runtime 4);
library code raises them directly.
"""


class LongreconError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(LongreconError, ValueError):
    """An array argument violates a shape/finiteness/value precondition."""


class DegenerateInputError(InvalidInputError):
    """Input is structurally valid but degenerate (e.g. all-zero image)."""


class ConfigurationError(LongreconError, ValueError):
    """A config object or CLI invocation asks for something unsatisfiable."""


class DataError(LongreconError):
    """An on-disk artifact (HDF5 container, NIfTI, manifest) is malformed."""


class CheckpointError(DataError):
    """Checkpoint archive is corrupt or inconsistent with its config."""


class RegistrationAdapterError(LongreconError, RuntimeError):
    """External registration tool failed; carries captured diagnostics."""

    def __init__(self, message, *, command=None, stdout=None, stderr=None):
        super().__init__(message)
        self.command = command
        self.stdout = stdout
        self.stderr = stderr


class UndefinedTestError(LongreconError, ValueError):
    """Statistical test is undefined for the given sample (e.g. no nonzero diffs)."""


class TrainingError(LongreconError, RuntimeError):
    """Training aborted (NaN loss or similar); diagnostics saved beforehand."""
