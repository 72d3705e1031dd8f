"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class DegenerateInput(ValueError):
    pass


class WarmStartUnavailable(ArithmeticError):
    """Raised when the LS warm start has a zero operator; callers fall back to zeros."""


class DivergenceError(ArithmeticError):
    def __init__(self, iteration, msg=None):
        self.iteration = iteration
        super().__init__(msg or f"non-finite iterate at iteration {iteration}")


class NumericFailure(ArithmeticError):
    def __init__(self, stage, msg=None):
        self.stage = stage
        super().__init__(msg or f"non-finite activations in stage {stage}")


class FormatError(ValueError):
    """On-disk dataset/checkpoint does not match its manifest."""


class ArchMismatch(FormatError):
    pass
