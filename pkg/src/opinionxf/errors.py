"""Exception hierarchy shared by every opinionxf module."""


class OpinionXfError(Exception):
    """Base class for all package errors."""


class ConfigError(OpinionXfError, ValueError):
    pass


class ParseError(OpinionXfError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ParseError):
    pass


class FormatError(ParseError):
    pass


class VocabularyError(OpinionXfError, KeyError):
    """An answer string is not in the per-question vocabulary."""

    def __init__(self, question, answer):
        self.question = question
        self.answer = answer
        super().__init__(f"question {question}: answer {answer!r} not in vocabulary")

    def __str__(self):
        return self.args[0]


class EmptyInputError(OpinionXfError, ValueError):
    pass


class DegenerateDeckError(OpinionXfError, ValueError):
    pass


class UnassignedRecordError(OpinionXfError, LookupError):
    pass


class NumericError(OpinionXfError, ArithmeticError):
    pass


class SpectrumIntegrityError(NumericError):
    pass


class TrainingFailure(NumericError):
    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(f"{message} (epoch={epoch}, step={step})")


class ComparisonError(OpinionXfError, ValueError):
    pass
