"""A small numpy autodiff engine with the layers the two branches need."""

from .branches import Branch1D, Branch1DConfig, Branch2D, Branch2DConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import Conv1d, Conv2d, Dense, Dropout, Module
from .optim import Adam, adam_step
from .tensor import NumericalError, Parameter, TapeError, Tensor
from .train import History, TrainConfig

__all__ = [
    "Adam", "Branch1D", "Branch1DConfig", "Branch2D", "Branch2DConfig", "CheckpointError",
    "Conv1d", "Conv2d", "Dense", "Dropout", "History", "Module", "NumericalError", "Parameter",
    "TapeError", "Tensor", "TrainConfig", "adam_step", "load_checkpoint", "save_checkpoint",
]
