"""Exception hierarchy shared by every dircov module."""


class DircovError(Exception):
    """Base class for all library errors."""


class InvalidInputError(DircovError, ValueError):
    """Malformed data: non-finite entries, dimension mismatches."""


class InvalidParameterError(DircovError, ValueError):
    """A tuning parameter lies outside its admissible range."""


class InsufficientDataError(DircovError, ValueError):
    """Not enough samples for the requested block plan or split."""


class DegenerateBasisError(DircovError, ValueError):
    """Vectors that should span a subspace are linearly dependent."""


class UndefinedRankError(DircovError, ValueError):
    """Effective rank requested for the zero matrix."""


class InvalidSpecError(DircovError, ValueError):
    """An adversarial construction violates its defining constraints."""


class InvalidRegimeError(DircovError, ValueError):
    """Oracle regime indices do not fit inside the ambient dimension."""


class InvalidDirectionError(DircovError, ValueError):
    """A query direction is zero or otherwise unusable."""


class DegenerateSequenceError(DircovError, ValueError):
    """An admissible sequence has no levels after clipping."""


class ConfigError(DircovError, ValueError):
    """A bench/CLI configuration file is malformed."""
