"""Error types shared across the package."""


class ElrlabError(Exception):
    """Base class for all package errors."""


class DimensionError(ElrlabError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(ElrlabError):
    """A caller violated an operation's precondition."""


class StateError(ElrlabError):
    """Stateful component used before it was initialized."""


class ConfigError(ElrlabError):
    """Invalid or unknown experiment configuration."""


class FormatError(ElrlabError):
    """Malformed input file."""


class NumericsError(ElrlabError):
    """Non-finite value encountered during training."""
