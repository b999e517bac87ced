"""Exception taxonomy shared across the package."""


class HierarchyFlowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HierarchyFlowError):
    """Invalid model/training configuration (bad channel counts, empty pools, ...)."""


class ContractError(HierarchyFlowError):
    """A caller violated an operation's precondition (shape mismatch, reused cache, ...)."""


class NumericalError(HierarchyFlowError):
    """Non-finite values appeared where the pipeline requires finite ones."""


class CheckpointError(HierarchyFlowError):
    """A serialized file is malformed, truncated, or inconsistent with the model."""
