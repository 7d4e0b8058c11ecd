"""Numpy autodiff, the GATv2 stage-1 model, its loss and training loop."""

from .loss import grad_check, loss_stage1
from .model import ModelConfig, forward, make_batch
from .tensor import Tensor
from .train import ModelParams, TrainConfig, cosine_warm_restarts, train_stage1

__all__ = ["Tensor", "ModelConfig", "ModelParams", "TrainConfig", "forward", "make_batch", "loss_stage1",
           "grad_check", "train_stage1", "cosine_warm_restarts"]
