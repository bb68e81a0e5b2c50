"""Exception types raised across the package."""


class PruneBenchError(Exception):
    """Base class for all package errors."""


class InputShapeError(PruneBenchError, ValueError):
    pass


class LabelError(PruneBenchError, ValueError):
    pass


class EmptyBatchError(PruneBenchError, ValueError):
    pass


class EmptyDatasetError(PruneBenchError, ValueError):
    pass


class InfeasiblePartitionError(PruneBenchError, ValueError):
    pass


class DatasetFormatError(PruneBenchError):
    """Malformed dataset file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BatchTooLargeError(PruneBenchError, ValueError):
    pass


class ConfigError(PruneBenchError, ValueError):
    """Invalid configuration; ``path`` is a JSON-pointer to the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path


class UnobservedSampleError(PruneBenchError, ValueError):
    def __init__(self, index):
        super().__init__(f"sample {index} was never observed during warm-up")
        self.index = index


class EmptySelectionError(PruneBenchError, ValueError):
    pass


class MaskError(PruneBenchError, ValueError):
    pass


class ScheduleOverrunError(PruneBenchError, ValueError):
    pass


class UndefinedRatioError(PruneBenchError, ZeroDivisionError):
    pass


class ComparisonError(PruneBenchError, ValueError):
    pass


class DevicePipelineError(PruneBenchError):
    """A device run failed; carries the device id for attribution."""

    def __init__(self, device_id, method, cause):
        super().__init__(f"device {device_id} ({method}): {cause}")
        self.device_id = device_id
        self.method = method
        self.cause = cause
