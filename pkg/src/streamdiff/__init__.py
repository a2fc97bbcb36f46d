"""Causal streaming full-body motion reconstruction with frame-wise diffusion."""
from .core import ControlSignal, HeadPose, canonicalize, decanonicalize
from .denoiser import DenoiserModel, ModelConfig, NetworkDenoiser, load_checkpoint, save_checkpoint
from .diffusion import DiffusionSchedule, forward_corrupt, inject_noise, make_schedule, reverse_jump
from .estimator import StreamingMotionDiffuser
from .online import EngineConfig, future_noise_schedule, init_stream, offline_reconstruct, run_stream, tick
from .synthgen import SynthConfig, generate_dataset, generate_sequence
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ControlSignal",
    "DenoiserModel",
    "DiffusionSchedule",
    "EngineConfig",
    "HeadPose",
    "ModelConfig",
    "NetworkDenoiser",
    "StreamingMotionDiffuser",
    "SynthConfig",
    "TrainConfig",
    "canonicalize",
    "decanonicalize",
    "forward_corrupt",
    "future_noise_schedule",
    "generate_dataset",
    "generate_sequence",
    "init_stream",
    "inject_noise",
    "load_checkpoint",
    "make_schedule",
    "offline_reconstruct",
    "reverse_jump",
    "run_stream",
    "save_checkpoint",
    "tick",
    "train",
]
