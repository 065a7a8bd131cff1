"""Exception types shared across the package."""


class CorpusFormatError(ValueError):
    """A dataset or word-vector file does not follow its expected format."""


class AlignmentError(ValueError):
    """Character offsets or sub-word pieces cannot be mapped back to words."""


class ConfigurationError(ValueError):
    """A hyperparameter or config combination is invalid."""


class ParserUnavailableError(RuntimeError):
    """No dependency parser is configured and no cached parse exists."""


class BackendUnavailableError(RuntimeError):
    """The requested encoder backend cannot be constructed in this environment."""


class TruncationError(RuntimeError):
    """An input exceeds the encoder's maximum sequence length."""
