"""Exception types shared across the package.

Every error raised on a documented failure path derives from IplError so the
CLI can map them to a message on stderr and a nonzero exit status. Anything
else escaping to the CLI is a bug and keeps its traceback.
"""


class IplError(Exception):
    """Base class for all expected failures."""


class MissingFileError(IplError):
    """A referenced file does not exist or cannot be read."""


class FormatError(IplError):
    """A file exists but its bytes do not match the documented format."""


class IntegrityError(IplError):
    """Cross-reference or consistency violation in otherwise well-formed data."""


class ConfigError(IplError):
    """A configuration value violates its documented constraints."""


class StateError(IplError):
    """An operation was invoked on an object in the wrong state."""


class NumericError(IplError):
    """Non-finite input or a degenerate value where arithmetic is undefined."""


class NotFoundError(IplError):
    """A lookup for an element that is not present."""


class ContractError(IplError):
    """A caller violated an operation precondition (shape, membership)."""


class SizeError(IplError):
    """A guard against combinatorial blow-up was exceeded."""


class DomainError(IplError):
    """Arguments outside the mathematical domain of a function."""
