"""Exception hierarchy shared across the package."""


class SPDPError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SPDPError):
    """Malformed or unusable input data (corpus files, splits, configs)."""


class IntegrityError(SPDPError):
    """A sampler state or snapshot violates the count-consistency rules."""


class CacheOverflowError(SPDPError):
    """A Stirling number was requested beyond the cache bound."""


class DegenerateDistributionError(SPDPError):
    """Every log-weight is -inf, so no category can be drawn."""


class UnsupportedConfigurationError(SPDPError):
    """The requested combination of options is not implemented."""


class UsageError(SPDPError):
    """Invalid command-line arguments or run configuration."""
