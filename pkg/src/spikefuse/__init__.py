"""Spiking audio-visual classifier with cross-modal residual fusion, on a numpy autograd core."""

from .config import DataConfig, ExperimentConfig, ModelConfig, NoiseConfig, TrainConfig, desk_preset
from .model import Batch, Model, build_model, forward, predict
from .tensor import Tensor, default_dtype, no_grad

__all__ = [
    "Batch", "DataConfig", "ExperimentConfig", "Model", "ModelConfig", "NoiseConfig", "Tensor",
    "TrainConfig", "build_model", "default_dtype", "desk_preset", "forward", "no_grad", "predict",
]
__version__ = "0.1.0"
