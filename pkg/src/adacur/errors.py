"""Exception hierarchy shared across the package."""


class AdacurError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AdacurError, ValueError):
    """Bad input: wrong shape, non-finite entries, infeasible counts."""


class ConfigError(ValidationError):
    """An invalid search or experiment configuration."""


class FactorizationError(AdacurError, ArithmeticError):
    """A matrix factorization (SVD) failed to converge."""


class TransportError(AdacurError, OSError):
    """A remote scorer could not be reached or returned an error."""


class BudgetExceededError(AdacurError, RuntimeError):
    """A ledger with a hard limit was asked to charge past that limit."""


class IndexFormatError(AdacurError, ValueError):
    """An index file is corrupt, truncated or has bad magic bytes."""


class IndexVersionError(IndexFormatError):
    """An index file was written with an unsupported format version."""


class IndexBuildError(AdacurError, RuntimeError):
    """Scoring failed partway through an offline index build."""

    def __init__(self, query_id, item_id, cause):
        super().__init__(f"index build failed at (query={query_id}, item={item_id}): {cause}")
        self.query_id = query_id
        self.item_id = item_id
        self.cause = cause
