"""Exception types shared across the package."""


class SparseMFError(Exception):
    """Base class for all sparsemf errors."""


class NotPositiveDefiniteError(SparseMFError):
    """A matrix that must be SPD failed Cholesky at every jitter level."""


class DimensionMismatchError(SparseMFError, ValueError):
    """Operands have incompatible shapes."""


class NonPositiveInverseDiagonalError(SparseMFError):
    """Diagonal of an SPD inverse came out non-positive (SPD breakdown)."""


class NonPositiveKError(SparseMFError):
    """The prior-scale update produced k <= 0; the run has diverged."""


class ZeroDenominatorError(SparseMFError):
    """|k * z_b| underflowed; the Laplace correction terms are undefined."""


class ZeroColumnError(SparseMFError, ValueError):
    """A factor column has zero norm, so its normalizer is undefined."""


class PgmError(SparseMFError, ValueError):
    """Base class for PGM ingestion failures."""


class UnsupportedFormatError(PgmError):
    """Not an 8-bit P2/P5 PGM file."""


class CorruptHeaderError(PgmError):
    """PGM header or raster does not parse."""


class NormalizationDegenerateError(SparseMFError, ValueError):
    """Image has zero variance; cannot standardize."""
