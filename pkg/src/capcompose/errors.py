"""Exception hierarchy for the toolkit.

``InputError`` subclasses map to CLI exit code 2, ``NumericalError`` to 3.
"""


class CapComposeError(Exception):
    exit_code = 1


class InputError(CapComposeError):
    """Bad user input: files, configuration values, malformed corpora."""

    exit_code = 2


class NumericalError(CapComposeError):
    """A non-finite value appeared during numeric computation."""

    exit_code = 3


class ConfigError(InputError):
    pass


class EmptyCorpusError(InputError):
    pass


class CorpusFormatError(InputError):
    pass


class NotEnoughPhrasesError(InputError):
    pass


class EmptyPhraseError(InputError):
    pass


class InvalidTokenError(InputError):
    pass


class EmptyTrainingSetError(InputError):
    pass


class ShapeError(InputError):
    pass


class PoolTooSmallError(InputError):
    pass


class NoConnectablePairError(CapComposeError):
    """Every ordered pair in the pool was judged unconnectable."""


class EmptyPoolError(InputError):
    pass


class OracleTooLargeError(InputError):
    pass


class EmptySetError(InputError):
    pass


class NotEnoughCaptionsError(InputError):
    pass


class IncompatibleArtifactsError(InputError):
    pass
