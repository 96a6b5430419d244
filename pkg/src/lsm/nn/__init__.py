"""Small neural-network stack: autodiff, layers, model builders, training,
and checkpoints."""

from lsm.nn.autodiff import Tensor
from lsm.nn.models import ModelSpec, Model, build, build_cnn1d, build_cnn2d, build_vit, build_mlp, param_count
from lsm.nn.training import TrainConfig, train
from lsm.nn.checkpoint import Checkpoint, save_checkpoint, load_checkpoint, predict_batch

__all__ = [
    "Tensor",
    "ModelSpec",
    "Model",
    "build",
    "build_cnn1d",
    "build_cnn2d",
    "build_vit",
    "build_mlp",
    "param_count",
    "TrainConfig",
    "train",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "predict_batch",
]
