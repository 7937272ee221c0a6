from typing import Optional


class AlterMomaException(Exception):
    # process exit code used by the CLI when this exception escapes a command
    exit_code: int = 1


class ShapeMismatchError(AlterMomaException):
    pass


class MissingInputError(AlterMomaException):
    pass


class GraphStateError(AlterMomaException):
    pass


class MaskingError(AlterMomaException):
    pass


class LedgerError(AlterMomaException):
    pass


class ModelTooLargeError(AlterMomaException):
    pass


class VerificationFailure(AlterMomaException):
    exit_code = 2


class CorruptFileError(AlterMomaException):
    exit_code = 3

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f'{message} (at byte offset {offset})'
        super().__init__(message)
