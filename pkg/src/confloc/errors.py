"""Exception types shared across the package."""


class ConflocError(Exception):
    """Base class for every error raised by confloc."""


class FormatError(ConflocError):
    """A file is missing required structure (header, mandatory column)."""


class ParseError(ConflocError):
    """A row or cell could not be parsed."""


class StateError(ConflocError):
    """An operation was applied in an invalid state (e.g. double normalization)."""


class ConfigurationError(ConflocError):
    """A configuration value is outside its legal range."""


class ContractError(ConflocError):
    """A call violated an operation's precondition."""


class CoverageError(ConflocError):
    """A prediction table does not cover every required record."""


class ValidationError(ConflocError):
    """Data failed a semantic validity check."""
