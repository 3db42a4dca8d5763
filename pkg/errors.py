class CompactorError(ValueError):
    """Base class for every invalid-input error raised by the compactor."""


class InvalidRotationError(CompactorError):
    pass


class InvalidScaleError(CompactorError):
    pass


class ShapeMismatchError(CompactorError):
    pass


class BudgetError(CompactorError):
    pass


class PlanMismatchError(CompactorError):
    pass


class QuantileError(CompactorError):
    pass


class MissingMapsError(CompactorError):
    pass


class PlyFormatError(CompactorError):
    pass


class UnsupportedFormatError(CompactorError):
    pass


class SceneLoadError(CompactorError):
    pass


class RenderGuardError(CompactorError):
    pass


class ConfigError(CompactorError):
    pass
