"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Shapes, values, or arguments violate an operation's contract."""


class DomainError(ValueError):
    """Scalar argument outside the mathematical domain of an operation."""


class UnsupportedResolutionError(ValueError):
    """Grid resolution not supported (odd sizes, non powers of two)."""


class CapacityError(RuntimeError):
    """Requested computation exceeds a hard size guard."""


class InvalidMeshError(ValueError):
    """Mesh fails a structural requirement (non-triangular, not watertight)."""


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during optimization."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")
