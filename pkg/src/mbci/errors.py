"""Exception types shared across the package."""


class MbciError(Exception):
    """Base class for all package errors."""


class IngestError(MbciError):
    """Source cannot be opened or parsed (missing file, bad header, bad rate)."""


class DeviceUnavailableError(IngestError):
    """Live device requested but not reachable."""


class FilterDesignError(MbciError):
    """Band-pass design violated its preconditions or produced an unstable filter."""


class DegenerateDataError(MbciError):
    """An operation received data with no usable variance (e.g. zero total power)."""


class WeightsError(MbciError):
    """Weight container failed validation (shape mismatch, corruption, bad version)."""


class SessionError(MbciError):
    """Session lifecycle violation (already active, unknown prompt, duplicate answer)."""


class CorruptSessionError(SessionError):
    """Persisted session directory is incomplete or fails its checksums."""


class ResponseValidationError(MbciError):
    """MISC or Likert response outside the instrument's range or label table."""
