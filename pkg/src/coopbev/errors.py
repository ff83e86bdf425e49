"""Exception types shared across the package."""


class CoopBevError(Exception):
    """Base class for all package errors."""


class ConfigError(CoopBevError):
    """Bad config file, bad CLI input, or violated operation precondition."""


class ShapeError(CoopBevError):
    """Shape-incompatible tensor inputs. Message carries both shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}")


class GenerationError(CoopBevError):
    """Scene generation could not place walls/objects within the attempt budget."""


class CheckpointError(CoopBevError):
    """Unreadable checkpoint: bad magic/version or architecture mismatch."""


class NumericalError(CoopBevError):
    """NaN/Inf encountered where finite values are required."""
