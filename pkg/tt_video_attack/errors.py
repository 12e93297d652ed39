from typing import Optional


class TTVideoAttackError(Exception):
    pass


class ConfigError(TTVideoAttackError):
    pass


class SpecError(TTVideoAttackError):
    pass


class RejectedInputError(TTVideoAttackError):
    pass


class ShiftRangeError(RejectedInputError):
    pass


class UnsupportedModelError(TTVideoAttackError):
    pass


class ProtocolError(TTVideoAttackError):
    pass


class NumericFault(TTVideoAttackError):
    """
    A non-finite value showed up at an operation boundary.

    `iteration` is set when the fault happened inside an iterative attack.
    """

    def __init__(self, message: str, iteration: Optional[int] = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class TrainingFault(NumericFault):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class FormatError(TTVideoAttackError):
    """Corrupt or truncated container file. `offset` is the byte position where reading failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
