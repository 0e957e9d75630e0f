"""Desk-scale semantic similarity scoring: encoder, Bi-LSTM, attention pooling."""
from . import autodiff, data, ensemble, objectives, synthetic, training
from .autodiff import Tensor, backward, gradcheck, no_grad, zero_grads
from .model import BatchInput, ModelConfig, SimilarityModel, load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, fit, train

__version__ = "0.1.0"

__all__ = [
    "BatchInput",
    "ModelConfig",
    "SimilarityModel",
    "Tensor",
    "TrainConfig",
    "autodiff",
    "backward",
    "data",
    "ensemble",
    "evaluate",
    "fit",
    "gradcheck",
    "load_checkpoint",
    "no_grad",
    "objectives",
    "save_checkpoint",
    "synthetic",
    "train",
    "training",
    "zero_grads",
]
