"""Exception types raised by lopalt."""


class DimensionError(ValueError):
    """Vector or operator sizes do not chain."""


class ParameterError(ValueError):
    """A scalar parameter is outside its admissible range."""


class InvertibilityError(ValueError):
    """A transform that must be invertible is (numerically) singular."""


class DivergenceError(RuntimeError):
    """The iteration produced non-finite values.

    Attributes
    ----------
    block : str
        Name of the first state block found to be non-finite.
    iteration : int
        Iteration index at which it was detected.
    """

    def __init__(self, block, iteration):
        super().__init__(f"non-finite values in block '{block}' at iteration {iteration}")
        self.block = block
        self.iteration = iteration


class FormatError(ValueError):
    """An input file is malformed or of an unsupported kind."""
