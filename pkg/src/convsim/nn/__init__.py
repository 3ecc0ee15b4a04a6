"""From-scratch CNN engine: layers, models, checkpoints and training loops."""

from .layers import BatchNorm2d, Conv2d, Flatten, Layer, LayerShapeError, LeakyReLU, Linear, MaxPool2d
from .model import Model, build_model, cnn1, cnn2, cross_entropy, load_checkpoint, save_checkpoint, tiny
from .train import TrainConfig, TrainingLog, evaluate, iterative_init, model_conv_sim, train

__all__ = [
    "BatchNorm2d", "Conv2d", "Flatten", "Layer", "LayerShapeError", "LeakyReLU", "Linear", "MaxPool2d",
    "Model", "build_model", "cnn1", "cnn2", "cross_entropy", "load_checkpoint", "save_checkpoint", "tiny",
    "TrainConfig", "TrainingLog", "evaluate", "iterative_init", "model_conv_sim", "train",
]
