"""Exception types raised across the package."""


class HierclError(ValueError):
    """Base class for all package errors."""


class HierarchyError(HierclError):
    pass


class MultipleRoots(HierarchyError):
    pass


class CycleDetected(HierarchyError):
    pass


class UnknownParent(HierarchyError):
    pass


class UnknownCategory(HierarchyError):
    pass


class LevelOutOfRange(HierarchyError):
    pass


class DegenerateBatch(HierclError):
    """Fewer than two foreground rows where a pairwise loss needs them."""


class EmptyLevel(HierclError):
    pass


class ZeroVector(HierclError):
    pass


class InfeasibleShape(HierclError):
    pass


class DimensionMismatch(HierclError):
    pass


class DivergenceDetected(HierclError):
    pass
