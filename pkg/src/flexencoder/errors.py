"""Exception types raised across the package."""


class FlexEncoderError(Exception):
    """Base class for every error raised by flexencoder."""


class ShapeError(FlexEncoderError, ValueError):
    pass


class ConfigError(FlexEncoderError, ValueError):
    pass


class InvalidProbabilityError(ConfigError):
    pass


class ParseError(FlexEncoderError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDatasetError(FlexEncoderError):
    pass


class EmptyMaskError(FlexEncoderError):
    pass


class EmptyEvaluationError(FlexEncoderError):
    pass


class DivergenceError(FlexEncoderError):
    def __init__(self, epoch: int, message: str = "loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


class InsufficientDataError(FlexEncoderError):
    pass


class EmptyResultsError(FlexEncoderError):
    pass
