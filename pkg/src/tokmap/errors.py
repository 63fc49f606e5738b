"""Exception hierarchy. Every error raised by this package derives from TokmapError."""


class TokmapError(Exception):
    pass


class CorpusError(TokmapError):
    """Unreadable, undecodable, or invalidly parametrized corpus input."""


class VocabError(TokmapError):
    """Malformed vocabulary, marker style, or merge rules."""


class EncodingError(TokmapError):
    """Text could not be encoded with the given vocabulary."""


class AlignerError(TokmapError):
    """EM training, Viterbi decoding, or alignment-file parsing failure."""


class MapperError(TokmapError):
    """Invalid counts, token decompositions, or mapping files."""


class TensorFormatError(TokmapError):
    """Tensor container violates the declared layout."""


class RemapError(TokmapError):
    """Embedding or head remapping cannot proceed."""


class HydraError(TokmapError):
    """Multi-vocabulary composition is inconsistent."""


class ConfigError(TokmapError):
    """Pipeline configuration failed validation (exit code 2)."""


class StageError(TokmapError):
    """A pipeline stage aborted (exit code 3)."""

    def __init__(self, stage: str, cause: str):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
