from pyavrobust.avmodels.checkpoint import (
    load_checkpoint,
    load_grid,
    save_checkpoint,
    save_grid,
)
from pyavrobust.avmodels.network import (
    AVModel,
    ForwardTrace,
    accuracy,
    build_model,
    forward,
    fuse,
    model_grid,
    predict,
    predict_logits,
)
from pyavrobust.avmodels.spec import ModelSpec, grid_specs
from pyavrobust.avmodels.training import SGD, TrainConfig, train_clean, train_grid

__all__ = [
    "AVModel",
    "ForwardTrace",
    "ModelSpec",
    "SGD",
    "TrainConfig",
    "accuracy",
    "build_model",
    "forward",
    "fuse",
    "grid_specs",
    "load_checkpoint",
    "load_grid",
    "model_grid",
    "predict",
    "predict_logits",
    "save_checkpoint",
    "save_grid",
    "train_clean",
    "train_grid",
]
