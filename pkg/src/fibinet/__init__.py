"""FiBiNET: CTR model with SENET reweighting and bilinear feature interactions.

Pure numpy with optional numba-compiled hot kernels (FIBINET_BACKEND=numpy|numba|auto).
"""

from . import backend
from .data import (
    ExampleBatch,
    Field,
    FieldSchema,
    SyntheticSpec,
    batches,
    generate_synthetic,
    load_tsv,
    split_train_test,
    write_tsv,
)
from .errors import (
    BoundsError,
    CheckpointError,
    ConfigError,
    FibinetError,
    MetricUndefinedError,
    NumericError,
    ParseError,
    ShapeError,
    StateError,
)
from .metrics import auc, auc_pairwise, logloss
from .model import FiBiNet, ModelConfig, init_params, load_checkpoint, save_checkpoint
from .numeric import Rng
# the train() entry point stays on the submodule (fibinet.train.train): a bare
# re-export would shadow the `fibinet.train` module attribute with the function
from .train import AdamState, TrainConfig, adam_step, evaluate, grad_check, init_adam, run_ablation

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BoundsError",
    "CheckpointError",
    "ConfigError",
    "ExampleBatch",
    "FiBiNet",
    "FibinetError",
    "Field",
    "FieldSchema",
    "MetricUndefinedError",
    "ModelConfig",
    "NumericError",
    "ParseError",
    "Rng",
    "ShapeError",
    "StateError",
    "SyntheticSpec",
    "TrainConfig",
    "adam_step",
    "auc",
    "auc_pairwise",
    "backend",
    "batches",
    "evaluate",
    "generate_synthetic",
    "grad_check",
    "init_adam",
    "init_params",
    "load_checkpoint",
    "load_tsv",
    "logloss",
    "run_ablation",
    "save_checkpoint",
    "split_train_test",
    "write_tsv",
]
