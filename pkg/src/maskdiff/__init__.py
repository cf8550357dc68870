"""Mask-diffusion decoding for text recognition on synthetic feature grids."""

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .estimator import MaskDiffusionRecognizer
from .inference import PolicyKind, RemaskPolicy, make_policy, run
from .model import MaskDiffusionDecoder, ModelConfig, init_params
from .training import TrainConfig, train_loop
from .vocab import Vocab, build_vocab, decode, encode

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "CheckpointError", "ExperimentConfig", "MaskDiffusionDecoder",
    "MaskDiffusionRecognizer", "ModelConfig", "PolicyKind", "RemaskPolicy", "TrainConfig",
    "Vocab", "build_vocab", "decode", "encode", "init_params", "load_checkpoint",
    "load_config", "make_policy", "run", "save_checkpoint", "train_loop",
]
