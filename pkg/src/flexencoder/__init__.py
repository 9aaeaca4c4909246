"""FlexEncoder: a configurable denoising autoencoder for rating prediction."""

__version__ = "0.1.0"

from .config import ModelConfig, parse_config, serialize_config
from .data import RatingTable, ingest, load_preprocessed, pivot, split
from .model import FlexModel, build_model, forward, masked_mse, round_to_grid
from .nn import Activation, RngStream
from .optim import Optimizer, OptimizerKind
from .trainer import EvalReport, evaluate, train

__all__ = [
    "Activation",
    "EvalReport",
    "FlexModel",
    "ModelConfig",
    "Optimizer",
    "OptimizerKind",
    "RatingTable",
    "RngStream",
    "build_model",
    "evaluate",
    "forward",
    "ingest",
    "load_preprocessed",
    "masked_mse",
    "parse_config",
    "pivot",
    "round_to_grid",
    "serialize_config",
    "split",
    "train",
]
