class SpatialNMFError(Exception):
    """Base class for errors raised by spatialnmf."""


class DatasetError(SpatialNMFError, ValueError):
    """Malformed or inconsistent input data.

    ``path`` names the offending file when the problem can be traced to one.
    """

    def __init__(self, message, path=None):
        self.path = None if path is None else str(path)
        if self.path is not None:
            message = f"{self.path}: {message}"
        super().__init__(message)


class DegenerateDatasetError(DatasetError):
    """A filter removed every gene or every cell."""


class GraphError(SpatialNMFError, ValueError):
    pass


class MetricError(SpatialNMFError, ValueError):
    pass
