"""Exception types raised across the package."""


class CATriNetError(Exception):
    """Base class for every error raised by catrinet."""


class DimensionError(CATriNetError, ValueError):
    pass


class ContractError(CATriNetError, ValueError):
    pass


class ConfigError(CATriNetError, ValueError):
    pass


class EmptyInputError(CATriNetError, ValueError):
    pass


class NonFiniteError(CATriNetError, FloatingPointError):
    """A forward operation produced NaN or Inf."""


class InsufficientDataError(CATriNetError, ValueError):
    pass


class AlignmentError(CATriNetError, ValueError):
    def __init__(self, message, ids=()):
        super().__init__(message)
        self.ids = sorted(ids)


class ParseError(CATriNetError, ValueError):
    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class ValidationError(ParseError):
    pass


class CompatibilityError(CATriNetError):
    pass
