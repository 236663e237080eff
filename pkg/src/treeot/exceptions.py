"""Exception hierarchy shared across the package."""


class TreeStructureError(ValueError):
    """Edge list does not describe a single rooted tree."""


class CycleError(TreeStructureError):
    pass


class DisconnectedError(TreeStructureError):
    pass


class DuplicateEdgeError(TreeStructureError):
    pass


class NegativeWeightError(TreeStructureError):
    pass


class MultipleParentsError(TreeStructureError):
    pass


class InvalidNodeError(IndexError, ValueError):
    """Node id outside ``0..L-1``."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where a finite one is required.

    ``context`` carries whatever locating information the raiser had
    (epoch/batch index during training, iteration for Sinkhorn).
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class BudgetExceededError(MemoryError):
    """Estimated working memory is above the configured budget."""

    def __init__(self, required_bytes, budget_bytes):
        super().__init__(
            f"requires ~{required_bytes} bytes, budget is {budget_bytes} bytes"
        )
        self.required_bytes = required_bytes
        self.budget_bytes = budget_bytes
