"""Exception types shared across the package."""


class PrismError(Exception):
    pass


class ConfigurationError(PrismError):
    """Invalid configuration, shapes, or file formats detected up front."""


class ParseError(PrismError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(PrismError):
    """Non-finite values where finiteness is required."""


class EvaluationError(PrismError):
    pass


class DatasetExhaustedError(PrismError):
    """Core filtering removed every user or item."""


class ModalityCoverageError(PrismError):
    def __init__(self, missing_ids):
        self.missing_ids = sorted(missing_ids)
        super().__init__(
            "incomplete modality coverage, missing item ids: "
            + ", ".join(str(i) for i in self.missing_ids)
        )


class CheckpointError(PrismError):
    pass
