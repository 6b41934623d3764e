"""Exception hierarchy shared by every grcnn module."""


class GRCNNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GRCNNError, ValueError):
    """A tensor shape does not fit the operation; the message names the axis."""


class ConfigError(GRCNNError, ValueError):
    """Invalid hyper-parameters (group counts, rates, unknown keys, ...)."""


class SpecError(ConfigError):
    """A ModelSpec whose block/transition boundaries do not line up."""


class DegenerateBatchError(DimensionError):
    """Batch statistics requested over fewer than two elements per channel."""


class IterationRangeError(GRCNNError, IndexError):
    """Recurrent iteration index outside ``[0, T)``."""


class ContractError(GRCNNError, ValueError):
    """A caller broke an API contract (e.g. non-scalar function in gradcheck)."""


class DataError(GRCNNError, ValueError):
    """Bad dataset content: labels out of range, zero std, ..."""


class FormatError(GRCNNError, ValueError):
    """A binary file (checkpoint, CIFAR batch, IDX) is malformed or truncated."""


class CheckpointError(GRCNNError, ValueError):
    """A checkpoint does not match the model it is loaded into."""


class TrainingError(GRCNNError, RuntimeError):
    """Training aborted (missing gradient, non-finite loss)."""


class NoGatesError(GRCNNError, ValueError):
    """Gate analysis requested on a model without gated blocks."""
