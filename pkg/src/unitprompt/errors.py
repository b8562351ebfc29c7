"""Exception types shared across the package."""


class UnitPromptError(Exception):
    """Base class for all errors raised by this package."""


class WavFormatError(UnitPromptError):
    """WAV input violates the RIFF / PCM-16 / mono / 16 kHz contract."""


class FeatureFileError(UnitPromptError):
    """ULMF feature file is malformed or inconsistent."""


class CodebookFileError(UnitPromptError):
    """ULMC codebook file is malformed or inconsistent."""


class QuantizerError(UnitPromptError):
    """Invalid input to k-means fitting or assignment."""


class ModelError(UnitPromptError):
    """Invalid model configuration or forward-pass input."""


class PromptError(UnitPromptError):
    """Prompt pool lookup or composition failure."""


class ManifestError(UnitPromptError):
    """Dataset manifest is malformed."""


class UnitFileError(UnitPromptError):
    """Unit-sequence text file is malformed."""


class TrainerError(UnitPromptError):
    """Training cannot proceed (bad split, NaN gradient, ...)."""


class CheckpointError(UnitPromptError):
    """Checkpoint file is malformed or inconsistent."""


class ConfigError(UnitPromptError):
    """Run configuration is invalid (unknown key, bad value)."""
