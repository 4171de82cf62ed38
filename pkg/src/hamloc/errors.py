class FormatError(ValueError):
    """Corrupt or inconsistent dataset / checkpoint bytes."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class GenerationError(ValueError):
    """Synthetic corpus parameters that cannot be realised."""


class NumericError(RuntimeError):
    """Non-finite loss during training."""


class InvalidStateError(RuntimeError):
    """Optimizer invoked without the gradients it needs."""
