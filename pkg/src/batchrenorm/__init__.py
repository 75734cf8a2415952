"""Batch normalization and batch renormalization, with a desk-scale
training harness for studying small and non-i.i.d. minibatch regimes."""

from .norm import (
    CorrectionSchedule,
    DegenerateBatchError,
    ForwardCache,
    NormGradients,
    NormState,
    bn_backward,
    bn_forward_train,
    brn_backward,
    brn_forward_train,
    norm_forward_inference,
    norm_forward_trainmode_eval,
    schedule_bounds,
    update_moving_stats,
)
from .net import (
    EmaTracker,
    Network,
    NetworkSpec,
    RMSProp,
    SGD,
    aggregate_gradients,
    ema_update,
    softmax_xent,
)
from .data import (
    Dataset,
    Microbatching,
    SamplerSpec,
    load_idx,
    make_gaussian_mixture,
    sample_batch,
    split_microbatches,
    split_train_val,
)
from .tensor import Rng, ShapeError
from .config import ConfigError, ExperimentConfig, load_config
from .harness import evaluate, run_experiment

__version__ = "0.1.0"
