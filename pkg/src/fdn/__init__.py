"""Raw-waveform speaker verification with finite-difference channel attention."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, grad_check
from .model import FdnNetwork, ModelConfig, count_parameters
from .audio import Waveform, read_wav, write_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import ScoreSet, compute_eer, cosine_score, extract_embedding
from .training import AmsGrad, TrainConfig, train

__all__ = [
    "AmsGrad",
    "FdnNetwork",
    "ModelConfig",
    "ScoreSet",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Waveform",
    "compute_eer",
    "cosine_score",
    "count_parameters",
    "extract_embedding",
    "grad_check",
    "load_checkpoint",
    "read_wav",
    "save_checkpoint",
    "train",
    "write_wav",
]
