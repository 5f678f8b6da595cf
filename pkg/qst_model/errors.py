"""Typed errors raised across qst_model.

Every error names the contract that failed; the CLI turns any ``QstError`` into a
non-zero exit code.
"""


class QstError(Exception):
    """Base class of all qst_model errors."""


class DimensionError(QstError, ValueError):
    """Shapes or lengths do not match, or a dimension exceeds the configured cap."""


class ArgumentError(QstError, ValueError):
    """An argument is outside its allowed range."""


class ContractViolation(QstError, ValueError):
    """A value-level precondition (Hermiticity, PSD, PMF, ...) does not hold."""


class DecompositionError(QstError, ArithmeticError):
    """An eigen or singular value decomposition failed to converge."""


class NumericOverflowError(QstError, ArithmeticError):
    """A network intermediate became non-finite."""

    def __init__(self, layer: str, detail: str = ""):
        self.layer = layer
        msg = f"non-finite value in {layer}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class DegeneracyError(QstError, ArithmeticError):
    """Coinciding eigenvalues make the eigen-decomposition gradient undefined."""


class ArtifactError(QstError, OSError):
    """A dataset, checkpoint or report file cannot be used."""


class VersionMismatchError(ArtifactError):
    pass


class MalformedFileError(ArtifactError):
    pass


class DimensionInconsistencyError(ArtifactError):
    pass
