"""Exception hierarchy shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class OutOfVocabularyError(ContractError):
    pass


class UnknownSpeakerError(ContractError):
    pass


class EmptyInputError(ContractError):
    pass


class UnsupportedAudioError(ContractError):
    pass


class UndefinedMetricError(ContractError):
    """A metric has no frames to be computed over."""


class ManifestError(ContractError):
    pass


class CheckpointError(Exception):
    """Checkpoint file is unreadable, corrupt or from another format version."""


class TrainingDivergence(RuntimeError):
    """Raised when a loss becomes non-finite."""
