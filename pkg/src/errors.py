"""Exception hierarchy. `exit_code` is the CLI exit status of each family."""


class MaxSimError(Exception):
    exit_code = 1


# --- configuration (exit 2) ---
class ConfigError(MaxSimError):
    exit_code = 2


class MissingInstruction(ConfigError):
    pass


class MissingInput(ConfigError):
    """An input file named on the command line or in a config cannot be read."""
    pass


# --- endpoints (exit 3) ---
class EndpointUnavailable(MaxSimError):
    exit_code = 3


class TransientEndpointError(MaxSimError):
    """Retryable endpoint failure (timeouts, 429, 5xx)."""
    exit_code = 3


class RefusedDescription(MaxSimError):
    """Endpoint declined to describe the input; the sample gets empty text."""
    exit_code = 3


# --- data inconsistencies (exit 4) ---
class DataError(MaxSimError):
    exit_code = 4


class MissingGeometry(DataError):
    pass


class ExcludedPair(DataError):
    pass


class DistractorNotAllowed(DataError):
    pass


class IncompleteSpec(DataError):
    pass


class DuplicateOutput(DataError):
    pass


class InconsistentInputs(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class UnknownActionLabel(DataError):
    pass


class InvalidManifest(DataError):
    pass


class InvalidRecord(DataError):
    """A line of a JSON input is not valid JSON."""
    pass


class CacheMismatch(DataError):
    pass


class MediaError(DataError):
    pass


class NoData(DataError):
    pass


class UndefinedAP(DataError):
    """Query has no relevant item in its database."""
    pass
