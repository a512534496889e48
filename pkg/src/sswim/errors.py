"""Exception types shared across the package."""


class SswimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SswimError):
    """A run configuration is malformed or references missing resources."""


class EmptyGridError(SswimError):
    """A time grid of length zero was requested."""


class DegenerateDistributionError(SswimError):
    """All pair probabilities are zero; nothing can be sampled."""


class TrivialPairError(SswimError):
    """A sampled pair produced identical contributions (zero criterion matrix)."""


class DegenerateNeuronError(SswimError):
    """A neuron's voltage trace is constant; it cannot be normalized."""


class SilentNetworkError(SswimError):
    """No hidden neuron emitted a single spike on the initialization batch."""


class EigensolverError(SswimError):
    """The symmetric eigendecomposition failed to converge."""

    def __init__(self, message, neuron=None):
        super().__init__(message)
        self.neuron = neuron


class PipelineError(SswimError):
    """A training phase failed; carries the phase name for diagnostics."""

    def __init__(self, phase, cause):
        super().__init__(f"phase '{phase}' failed: {cause}")
        self.phase = phase
        self.cause = cause
