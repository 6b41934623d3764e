"""Recurrent and gated recurrent convolutional networks on a small numpy
autodiff engine."""
from .analysis import GateStats, RFProfile, collect_gate_stats, effective_rf, export_csv
from .data import Dataset, augment, load_cifar10, load_mnist, normalize, synthetic_blobs
from .errors import (CheckpointError, ConfigError, ContractError, DataError, DegenerateBatchError,
                     DimensionError, FormatError, GRCNNError, IterationRangeError, NoGatesError, SpecError,
                     TrainingError)
from .gradcheck import gradcheck
from .layers import GRCL, GRCLConfig, TransitionLayer
from .model import (GRCNN, ModelSpec, TransitionSpec, build, grcnn56_spec, grcnn110_spec, mnist_small_spec,
                    param_breakdown, param_count, small_analysis_spec, spec_from_options, spec_to_options)
from .tensor import Tensor, default_dtype, no_grad, set_default_dtype
from .trainer import OptState, RunLog, TrainConfig, evaluate, train

__version__ = "0.1.0"
