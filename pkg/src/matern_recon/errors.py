"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ReconError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(ReconError, ValueError):
    pass


class UnsupportedGradientError(ReconError):
    """Analytic gradient requested for a kernel that is not differentiable."""


class UnsupportedKernelError(ReconError):
    pass


class SingularSystemError(ReconError):
    """Cholesky factorization failed; a larger ridge parameter usually helps."""


class CapacityError(ReconError):
    pass


class IterativeFailureError(ReconError):
    """Conjugate gradients did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EmptySurfaceError(ReconError):
    def __init__(self, message: str, fmin: float, fmax: float):
        super().__init__(message)
        self.fmin = fmin
        self.fmax = fmax


class ParseError(ReconError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NormalsRequiredError(ParseError):
    def __init__(self, path: str):
        super().__init__(f"{path}: normals required (nx, ny, nz missing)")


class StageError(ReconError):
    """Wraps a failure inside the reconstruction pipeline with its stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
