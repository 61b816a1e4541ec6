"""Exception types raised across the package."""


class PolicyExploreError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(PolicyExploreError, ValueError):
    pass


class InvalidPerturbationError(PolicyExploreError, ValueError):
    pass


class InvalidParameterError(PolicyExploreError, ValueError):
    pass


class InvalidBatchError(PolicyExploreError, ValueError):
    pass


class InvalidActionError(PolicyExploreError, ValueError):
    pass


class InvalidConstantsError(PolicyExploreError, ValueError):
    pass


class SingularMatrixError(PolicyExploreError, ArithmeticError):
    pass


class NonFiniteError(PolicyExploreError, ArithmeticError):
    """A rollout, loss or estimate produced a NaN or infinity."""


class DataError(PolicyExploreError, ValueError):
    """Malformed or inconsistent data (length mismatch, non-finite input)."""


class EpisodeError(PolicyExploreError, RuntimeError):
    """Environment used outside its episode contract."""


class ConfigError(PolicyExploreError, ValueError):
    pass
