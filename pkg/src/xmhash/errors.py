"""Error taxonomy shared by every module.

Shape problems, violated call contracts, malformed files, and numerical
divergence are distinct failure modes; the command line maps each class
to its own exit code.
"""


class ShapeError(ValueError):
    """Operands have incompatible or malformed dimensions."""


class ContractError(ValueError):
    """A call precondition was violated (bad argument value or state)."""


class FormatError(ValueError):
    """A file does not conform to its binary or textual format."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss value."""
