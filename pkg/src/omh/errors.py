"""Exception types shared across the package."""


class OMHError(Exception):
    pass


class ZeroNormRow(OMHError, ValueError):
    def __init__(self, index, which="a"):
        super().__init__(f"row {index} of {which} has (near) zero norm")
        self.index = index
        self.which = which


class DimensionMismatch(OMHError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class InvalidConfig(OMHError, ValueError):
    pass


class NumericalUnderflow(OMHError, ArithmeticError):
    pass


class NonFiniteLoss(OMHError, FloatingPointError):
    def __init__(self, step, term, value):
        super().__init__(f"non-finite loss at step {step}: {term} = {value}")
        self.step = step
        self.term = term
        self.value = value
