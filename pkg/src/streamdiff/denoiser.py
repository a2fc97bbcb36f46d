"""Clean-window (x0) prediction network and checkpoint persistence.

The network reads a window of ``[pose; mask]`` rows with one diffusion
level per row and predicts every clean pose in the window. Attention is
bidirectional inside the window; causality comes from what the masks and
levels reveal, not from attention masking.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import AugmentedWindow
from .diffusion import DiffusionSchedule, make_schedule

CHECKPOINT_MAGIC = b"SDCK"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 21
    h: int = 5
    f: int = 19
    width: int = 128
    n_blocks: int = 4
    heads: int = 4
    context_dim: int = 0

    @property
    def window(self) -> int:
        return self.h + 1 + self.f


def level_embedding(levels: torch.Tensor, width: int) -> torch.Tensor:
    """Sinusoidal embedding of integer diffusion levels, shape ``levels.shape + (width,)``."""
    half = width // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    arg = levels.to(torch.float64)[..., None] * freqs
    emb = torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)
    if width % 2:
        emb = torch.cat([emb, torch.zeros(emb.shape[:-1] + (1,), dtype=emb.dtype)], dim=-1)
    return emb


class Block(nn.Module):
    def __init__(self, width, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))

    def forward(self, x):
        y = self.norm1(x)
        # need_weights keeps attention off the eval-only fused path, so train
        # and eval modes produce bit-identical outputs
        x = x + self.attn(y, y, y, need_weights=True)[0]
        return x + self.ff(self.norm2(x))


class CrossBlock(nn.Module):
    def __init__(self, width, heads, context_dim):
        super().__init__()
        self.proj = nn.Linear(context_dim, width)
        self.norm = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)

    def forward(self, x, context):
        c = self.proj(context)
        return x + self.attn(self.norm(x), c, c, need_weights=True)[0]


class DenoiserModel(nn.Module):
    """Temporal self-attention encoder predicting clean (normalized) poses.

    Pose values are handled in a normalized space; ``pose_mean`` and
    ``pose_scale`` map canonical poses (meters) into it and are stored
    with the weights.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        try:
            W, D = config.width, config.dim
            self.inp = nn.Linear(2 * D, W)
            self.pos = nn.Parameter(0.02 * torch.randn(config.window, W))
            self.blocks = nn.ModuleList(Block(W, config.heads) for _ in range(config.n_blocks))
            self.cross = CrossBlock(W, config.heads, config.context_dim) if config.context_dim else None
            self.norm = nn.LayerNorm(W)
            self.out = nn.Linear(W, D)
        finally:
            torch.random.set_rng_state(gen_state)
        self.register_buffer("pose_mean", torch.zeros(D, dtype=torch.float64))
        self.register_buffer("pose_scale", torch.ones(D, dtype=torch.float64))

    def set_normalizer(self, mean, scale):
        self.pose_mean.copy_(torch.as_tensor(np.asarray(mean), dtype=torch.float64))
        self.pose_scale.copy_(torch.as_tensor(np.asarray(scale), dtype=torch.float64))

    def normalize(self, poses):
        return (np.asarray(poses) - self.pose_mean.numpy()) / self.pose_scale.numpy()

    def denormalize(self, latents):
        return np.asarray(latents) * self.pose_scale.numpy() + self.pose_mean.numpy()

    def forward(self, inputs: torch.Tensor, levels: torch.Tensor, context: torch.Tensor | None = None):
        """``inputs`` (B, N, 2D), ``levels`` (B, N) -> clean poses (B, N, D)."""
        dtype = self.inp.weight.dtype
        x = self.inp(inputs.to(dtype)) + self.pos + level_embedding(levels, self.config.width).to(dtype)
        for block in self.blocks:
            x = block(x)
        if self.cross is not None:
            if context is None:
                context = torch.zeros(inputs.shape[0], 1, self.config.context_dim, dtype=dtype)
            x = self.cross(x, context.to(dtype))
        return self.out(self.norm(x))

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.all(torch.isfinite(p)):
                raise ValueError(f"corrupt model: non-finite parameter {name}")


def predict_x0(model: DenoiserModel, aug: AugmentedWindow) -> np.ndarray:
    """Single-window inference; returns float64 array of shape ``(N, D)``."""
    cfg = model.config
    inputs = np.asarray(aug.inputs)
    if inputs.shape != (cfg.window, 2 * cfg.dim):
        raise ValueError(f"shape mismatch: expected {(cfg.window, 2 * cfg.dim)}, got {inputs.shape}")
    levels = np.asarray(aug.levels)
    if levels.shape != (cfg.window,):
        raise ValueError("shape mismatch: levels")
    model.check_finite()
    ctx = None
    if model.cross is not None and aug.context is not None:
        ctx = torch.as_tensor(np.asarray(aug.context, dtype=np.float32))[None]
    with torch.no_grad():
        out = model(
            torch.as_tensor(inputs.astype(np.float32))[None],
            torch.as_tensor(levels.astype(np.int64))[None],
            ctx,
        )
    return out[0].numpy().astype(np.float64)


def predict_x0_batch(model: DenoiserModel, inputs: np.ndarray, levels: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        out = model(torch.as_tensor(inputs.astype(np.float32)), torch.as_tensor(levels.astype(np.int64)))
    return out.numpy().astype(np.float64)


class NetworkDenoiser:
    """Adapter giving a trained model the engine's denoiser call signature."""

    def __init__(self, model: DenoiserModel):
        self.model = model
        self.model.eval()
        self.model.check_finite()
        self.calls = 0

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def __call__(self, aug: AugmentedWindow) -> np.ndarray:
        self.calls += 1
        return predict_x0(self.model, aug)

    def normalize(self, poses):
        return self.model.normalize(poses)

    def denormalize(self, latents):
        return self.model.denormalize(latents)


def _payload(model: DenoiserModel):
    tensors = []
    for name, value in model.state_dict().items():
        if name in ("pose_mean", "pose_scale"):
            continue
        tensors.append((name, value.detach().cpu().numpy().astype("<f4")))
    return tensors


def save_checkpoint(model: DenoiserModel, sched: DiffusionSchedule, path, train_config: dict | None = None):
    tensors = _payload(model)
    header = {
        "schedule": {"K": sched.K, "kind": sched.kind},
        "model": asdict(model.config),
        "normalizer": {
            "mean": [float(v) for v in model.pose_mean.numpy()],
            "scale": [float(v) for v in model.pose_scale.numpy()],
        },
        "train_config": train_config or {},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    head = json.dumps(header, sort_keys=True).encode()
    body = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(head)) + head
    body += b"".join(a.tobytes() for _, a in tensors)
    digest = hashlib.blake2b(body, digest_size=8).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + digest)
    tmp.replace(path)
    return path


def read_checkpoint_header(path) -> dict:
    return _parse(Path(path).read_bytes())[0]


def _parse(data: bytes):
    if len(data) < _PREFIX.size:
        raise CheckpointError("checksum failure: file too short")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("unknown version: not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unknown version: {version}")
    body, digest = data[:-8], data[-8:]
    if len(data) < _PREFIX.size + head_len + 8 or hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError("checksum failure")
    header = json.loads(body[_PREFIX.size : _PREFIX.size + head_len])
    return header, body[_PREFIX.size + head_len :]


def load_checkpoint(path) -> tuple[DenoiserModel, DiffusionSchedule]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    header, payload = _parse(data)
    config = ModelConfig(**header["model"])
    model = DenoiserModel(config)
    state = model.state_dict()
    arrays, offset = {}, 0
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in state or tuple(state[name].shape) != shape:
            raise CheckpointError(f"shape mismatch for tensor {name}")
        n = int(np.prod(shape)) * 4
        if offset + n > len(payload):
            raise CheckpointError("checksum failure: payload truncated")
        arrays[name] = np.frombuffer(payload, dtype="<f4", count=n // 4, offset=offset).reshape(shape)
        offset += n
    if offset != len(payload):
        raise CheckpointError("shape mismatch: trailing payload bytes")
    missing = set(state) - set(arrays) - {"pose_mean", "pose_scale"}
    if missing:
        raise CheckpointError(f"shape mismatch: missing tensors {sorted(missing)}")
    for name, arr in arrays.items():
        state[name] = torch.from_numpy(arr.astype(np.float32))
    state["pose_mean"] = torch.tensor(header["normalizer"]["mean"], dtype=torch.float64)
    state["pose_scale"] = torch.tensor(header["normalizer"]["scale"], dtype=torch.float64)
    model.load_state_dict(state)
    model.check_finite()
    model.eval()
    sched = make_schedule(header["schedule"]["K"], header["schedule"]["kind"])
    return model, sched
