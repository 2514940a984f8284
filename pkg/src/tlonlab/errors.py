"""Exception types shared across the package."""


class TlonError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(TlonError):
    """A pivot was non-positive during Cholesky factorization."""


class DimensionMismatch(TlonError):
    pass


class NoConvergence(TlonError):
    """Iterative eigensolver exhausted its sweep budget."""


class ShapeMismatch(TlonError):
    pass


class NonScalarOutput(TlonError):
    """backward() was asked to differentiate a non-scalar."""


class InvalidParams(TlonError):
    pass


class SolverDiverged(TlonError):
    pass


class Instability(TlonError):
    """A time-stepping solver produced unbounded values or broke CFL."""


class OutOfDomain(TlonError):
    pass


class UnknownGeometry(TlonError):
    pass


class InvalidArch(TlonError):
    pass


class ZeroReference(TlonError):
    """Relative L2 is undefined for an all-zero reference."""


class NanLoss(TlonError):
    """Training loss became non-finite; message carries the epoch index."""


class FormatError(TlonError):
    """A container file failed magic/version/structure validation."""


class ArchMismatch(TlonError):
    pass


class UnknownPolicy(TlonError):
    pass


class EmptyDataset(TlonError):
    pass


class MissingCheckpoint(TlonError):
    pass


class SchemaError(TlonError):
    """A report CSV failed schema validation."""
