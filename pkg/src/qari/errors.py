"""Exception hierarchy shared by every qari module."""


class QariError(Exception):
    """Base class for all recognizer errors."""


# audio front end
class NotRiffError(QariError, ValueError):
    pass


class UnsupportedFormatError(QariError, ValueError):
    pass


class WrongSampleRateError(QariError, ValueError):
    pass


class TruncatedChunkError(QariError, ValueError):
    pass


class EmptyAudioError(QariError, ValueError):
    pass


class AudioTooShortError(QariError, ValueError):
    pass


class EmptyInputError(QariError, ValueError):
    pass


# corpus resources
class NoHyphenError(QariError, ValueError):
    pass


class BadCommandIdError(QariError, ValueError):
    pass


class BadExtensionError(QariError, ValueError):
    pass


class DuplicatePhoneError(QariError, ValueError):
    def __init__(self, phone, line):
        super().__init__(f"duplicate phone {phone!r} at line {line}")
        self.phone = phone
        self.line = line


class UnknownPhoneError(QariError, ValueError):
    def __init__(self, phone, word=None):
        where = f" in pronunciation of {word!r}" if word is not None else ""
        super().__init__(f"unknown phone {phone!r}{where}")
        self.phone = phone
        self.word = word


class DuplicateVariantError(QariError, ValueError):
    pass


class EmptyPronunciationError(QariError, ValueError):
    pass


class VariantWithoutBaseError(QariError, ValueError):
    pass


class UnknownWordIdError(QariError, ValueError):
    def __init__(self, word_id, context=None):
        where = f" ({context})" if context else ""
        super().__init__(f"unknown word id {word_id!r}{where}")
        self.word_id = word_id


class EmptyTranscriptError(QariError, ValueError):
    pass


class DuplicateFileIdError(QariError, ValueError):
    pass


class UnknownSpeakerError(QariError, ValueError):
    pass


class MissingPronunciationError(QariError, KeyError):
    pass


class IoFailureError(QariError, OSError):
    pass


class VocabularyError(QariError, ValueError):
    pass


# acoustic model
class BadDimensionError(QariError, ValueError):
    pass


class VarianceBelowFloorError(QariError, ValueError):
    pass


class DimensionMismatchError(QariError, ValueError):
    pass


class MissingWordError(QariError, KeyError):
    pass


class MissingVariantError(QariError, KeyError):
    pass


class EmptyUtteranceError(MissingWordError):
    pass


class CorruptModelFileError(QariError, ValueError):
    pass


class VersionMismatchError(CorruptModelFileError):
    pass


# trainer
class UtteranceTooShortError(QariError, ValueError):
    pass


class InconsistentTrellisError(QariError, ValueError):
    pass


class UnmappedStateError(QariError, KeyError):
    pass


class EmptyAccumulatorError(QariError, ValueError):
    pass


class NoUsableUtterancesError(QariError, ValueError):
    pass


# decoder
class MissingPhoneError(QariError, KeyError):
    pass


class EmptyGrammarError(QariError, ValueError):
    pass


class NoCompletePathError(QariError, ValueError):
    pass


class EmptyFeaturesError(QariError, ValueError):
    pass


class TooLargeForOracleError(QariError, ValueError):
    pass


class EmptyReferenceError(QariError, ValueError):
    pass


class EmptyTestSetError(QariError, ValueError):
    pass


# reader
class UnknownIdError(QariError, ValueError):
    pass


class MalformedCommandError(QariError, ValueError):
    pass


class NumberOutOfRangeError(QariError, ValueError):
    pass
