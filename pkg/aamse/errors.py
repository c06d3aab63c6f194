''' Exceptions raised throughout aamse '''


class AAMSEError(Exception):

    '''
    Base class of all errors raised on purpose by this package,
    the command line maps it to exit status 3.
    '''


class InvalidInput(AAMSEError, ValueError):
    pass


class WavFormatError(InvalidInput):

    '''
    A WAV file that is not 16 kHz, mono, 16-bit PCM.
    *field* names the offending header field.
    '''

    def __init__(self, path, field, found, expected):

        self.path = path
        self.field = field
        super().__init__(
            f"{path}: unsupported WAV {field} {found!r}, expected {expected!r}"
        )


class ShapeError(AAMSEError, ValueError):
    pass


class ReconstructionError(AAMSEError):
    pass


class AlignmentError(AAMSEError):
    pass


class SpecError(AAMSEError):
    pass


class NumericalError(AAMSEError, ArithmeticError):

    '''
    Non-finite values during training. *utterance_id* gets
    attached by the training loop.
    '''

    def __init__(self, message, utterance_id=None):

        self.utterance_id = utterance_id
        super().__init__(message)

    def __str__(self):

        msg = super().__str__()
        if self.utterance_id is not None:
            return f"{msg} (utterance {self.utterance_id})"
        return msg
