"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class PipelineError(Exception):
    exit_code = 1


class InputError(PipelineError):
    exit_code = 1


class ParseError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ManifestMismatchError(InputError):
    pass


class EmptyPanelError(InputError):
    pass


class EmptyIntersectionError(InputError):
    pass


class ScreeningError(InputError):
    """Raised when the exclusion loop leaves fewer tests than ``min_chain``."""

    def __init__(self, message, removal_log=()):
        self.removal_log = list(removal_log)
        super().__init__(message)


class NumericalError(PipelineError):
    exit_code = 2


class DegenerateInputError(NumericalError):
    pass


class SeparationError(NumericalError):
    def __init__(self, message, columns=()):
        self.columns = list(columns)
        super().__init__(message)


class SingularMatrixError(NumericalError):
    pass


class ValidationError(PipelineError):
    exit_code = 3


class InternalConsistencyError(ValidationError):
    pass
