"""Exception types shared across the package."""


class SchemaError(ValueError):
    """A network or profile document violates the input schema."""


class TopologyError(ValueError):
    """The network graph is unusable for the requested operation."""


class DeviceError(ValueError):
    """A device model was driven outside its validity region."""


class FitError(ValueError):
    """A regression problem is degenerate (rank-deficient or empty)."""


class BuildError(ValueError):
    """An optimization program cannot be assembled from the given inputs."""


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""


class DruBlockedError(ConvergenceError):
    """The rectifier cannot absorb the required power (diode blocked)."""


class OracleError(RuntimeError):
    """The exhaustive search oracle cannot run or found nothing feasible."""
