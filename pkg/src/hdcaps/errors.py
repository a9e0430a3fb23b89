"""Exception types shared across the package."""


class FormatError(ValueError):
    """A binary container is malformed.

    Carries the file path, the byte offset at which the problem was
    detected, and a short reason; all three appear in the message.
    """

    def __init__(self, path, offset, reason):
        self.path = path
        self.offset = offset
        self.reason = reason
        super().__init__(f"{path}: byte {offset}: {reason}")


class DivergenceError(RuntimeError):
    """Training produced a non-finite value; names the offending tensor."""

    def __init__(self, tensor_name, reason="value is not finite"):
        self.tensor_name = tensor_name
        super().__init__(f"training diverged: {reason} (tensor: {tensor_name})")
