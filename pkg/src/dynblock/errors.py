"""Exception hierarchy. CLI exit codes map onto these classes."""


class DynBlockError(Exception):
    exit_code = 1


class InputError(DynBlockError, ValueError):
    """Malformed or inconsistent user data."""

    exit_code = 3


class ConfigError(DynBlockError, ValueError):
    """Invalid hyperparameters or option combinations."""

    exit_code = 2


class DomainError(DynBlockError, ValueError):
    """A combinatorial function was called outside its domain."""

    exit_code = 4


class InvariantError(DynBlockError, RuntimeError):
    """Internal bookkeeping no longer satisfies a structural invariant."""

    exit_code = 4
