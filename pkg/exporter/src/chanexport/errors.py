class ExportError(Exception):
    """Base class for exporter failures."""


class UnsupportedTopology(ExportError):
    """The model is not a chain-of-blocks residual CNN."""


class MissingBatchNorm(ExportError):
    """A prunable convolution has no trailing BatchNorm to score from."""


class GradientUnavailable(ExportError):
    """BatchNorm parameters carry no gradients to accumulate."""
