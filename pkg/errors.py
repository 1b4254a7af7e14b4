class LisardError(Exception):
    """Base class for every failure the CLI reports as a nonzero exit."""


class ContractViolation(LisardError, ValueError):
    """A precondition of an operation does not hold (shapes, ranges, modes)."""


class IngestionError(LisardError):
    """A dataset file or directory is missing, empty or truncated."""


class CorruptionError(LisardError):
    """A dataset file is readable but holds impossible values."""


class AttackError(LisardError):
    def __init__(self, message: str, batch_index: int | None = None) -> None:
        self.batch_index = batch_index
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        super().__init__(message)


class RegistryError(LisardError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class WeightsLoadError(LisardError):
    """Stored weight metadata does not match the requested backbone."""


class ChecksumError(WeightsLoadError):
    """A weight file's bytes do not match its recorded checksum."""


class ArtifactError(LisardError):
    """An attack-set artifact cannot be written, found or parsed."""


class HashMismatchError(ArtifactError):
    """An attack-set's content or key differs from its manifest."""


class ProtocolViolation(LisardError):
    """The gray-box premise (distinct weights, same family) is broken."""


class TrainingError(LisardError):
    def __init__(self, message: str, epoch: int, step: int) -> None:
        self.epoch = epoch
        self.step = step
        super().__init__(f"{message} at epoch {epoch}, step {step}")


class ConfigError(LisardError):
    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
