"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input rejected before any work was done (non-finite values, bad shapes)."""


class ConfigError(ValueError):
    """Inconsistent or missing configuration."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class NumericError(ArithmeticError):
    """A NaN or infinity appeared during computation."""


class DegenerateNormError(NumericError):
    """Normalisation of a (near) zero vector."""


class UndefinedSimilarityError(ValueError):
    """Cosine similarity requested for a zero-norm vector."""


class TunnelingError(RuntimeError):
    """Penetration exceeded the hard cap; the time step is too large."""


class ProvenanceError(RuntimeError):
    """An artifact on disk does not match the hash chain that produced it."""


class StageError(RuntimeError):
    """A pipeline stage failed; artifacts from earlier stages are untouched."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
