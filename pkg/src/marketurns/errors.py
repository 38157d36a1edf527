"""Exception types shared across the package."""


class ValidationError(ValueError):
    """A configuration, parameter set or scenario violates a structural constraint."""


class UndefinedPolicyError(ValidationError):
    """A removal policy was evaluated on a state where it is not defined."""


class SamplerError(RuntimeError):
    """A sampling routine could not make progress (e.g. rejection bound exhausted)."""


class CapacityError(RuntimeError):
    """An exact enumeration would exceed the configured state-space cap."""
