"""Exception hierarchy shared across the package."""


class PromptBOError(Exception):
    """Base class for all package errors."""


class ConfigError(PromptBOError):
    """Invalid run configuration. ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class OutOfRange(PromptBOError, IndexError):
    pass


class AlreadyConsumed(PromptBOError):
    pass


class EmptyPool(PromptBOError):
    pass


class WarmStartNotInSpace(PromptBOError):
    pass


class ShapeMismatch(PromptBOError, ValueError):
    pass


class DimensionMismatch(PromptBOError, ValueError):
    pass


class ProviderUnavailable(PromptBOError):
    pass


class NotFactored(PromptBOError):
    pass


class NumericalFailure(PromptBOError):
    pass


class EvaluatorFailure(PromptBOError):
    pass


class EvaluatorTimeout(EvaluatorFailure):
    pass


class BadFraction(PromptBOError, ValueError):
    pass


class DegenerateInput(PromptBOError, ValueError):
    pass


class JournalCorrupt(PromptBOError):
    pass


class ConfigMismatch(PromptBOError):
    pass
