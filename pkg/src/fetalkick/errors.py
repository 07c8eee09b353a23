"""Exception types shared across modules."""


class NumericError(RuntimeError):
    """A numeric routine produced a non-finite value (diverging loss, NNMF blow-up)."""
