"""Frame-wise noise training with causal (and noise-robust) observation injection."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .core import HEAD, WRIST_LEFT, WRIST_RIGHT, canonicalize, causal_masks, yaw_rotation
from .denoiser import DenoiserModel, ModelConfig
from .diffusion import DiffusionSchedule, forward_corrupt, inject_noise, make_schedule
from .synthgen import MotionSequence, SynthConfig, wrist_in_fov

logger = logging.getLogger(__name__)

SCALE_FLOOR = 0.01


@dataclass
class NoiseRobustConfig:
    enabled: bool = False
    l: float = 2.0
    k_star: int = 3


@dataclass
class TrainConfig:
    K: int = 100
    h: int = 5
    f: int = 19
    batch_size: int = 64
    steps: int = 5000
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    schedule: str = "cosine"
    noise_robust: NoiseRobustConfig = field(default_factory=NoiseRobustConfig)
    history_corrupt_n: int = 0
    mask_mode: str = "causal"
    bootstrap_prob: float = 0.1
    width: int = 128
    n_blocks: int = 4
    heads: int = 4
    log_every: int = 50

    def __post_init__(self):
        if isinstance(self.noise_robust, dict):
            self.noise_robust = NoiseRobustConfig(**self.noise_robust)
        self.betas = tuple(float(b) for b in self.betas)
        self.validate()

    def validate(self):
        errors = []
        if self.h < 0 or self.f < 0:
            errors.append("h, f: must be non-negative")
        if self.K < 2:
            errors.append("K: must be at least 2")
        if not 0 <= self.noise_robust.k_star <= self.K:
            errors.append("noise_robust.k_star: must lie in [0, K]")
        if self.noise_robust.l < 0:
            errors.append("noise_robust.l: must be non-negative")
        if not 0 <= self.history_corrupt_n <= self.K:
            errors.append("history_corrupt_n: must lie in [0, K]")
        if self.mask_mode not in ("causal", "offline"):
            errors.append("mask_mode: must be 'causal' or 'offline'")
        if not 0 <= self.bootstrap_prob <= 1:
            errors.append("bootstrap_prob: must lie in [0, 1]")
        if self.batch_size < 1 or self.steps < 0 or self.lr < 0:
            errors.append("batch_size/steps/lr: out of range")
        if self.schedule not in ("cosine", "linear"):
            errors.append("schedule: must be 'cosine' or 'linear'")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def window(self) -> int:
        return self.h + 1 + self.f

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def sample_noise_levels(rng: np.random.Generator, h: int, f: int, K: int, size=None) -> np.ndarray:
    """I.i.d. uniform levels on ``{0..K}`` for each of the ``h + 1 + f`` frames."""
    shape = (h + 1 + f,) if size is None else tuple(np.atleast_1d(size)) + (h + 1 + f,)
    return rng.integers(0, K + 1, size=shape)


def build_training_masks(h: int, f: int, vis, dim: int = 21) -> np.ndarray:
    """History all ones, current = head + visible wrists, future zeros."""
    return causal_masks(h, f, dim, int(vis[0]), int(vis[1]))


def causal_inject(x0, x_k, b):
    x0, x_k, b = np.asarray(x0), np.asarray(x_k), np.asarray(b)
    if x0.shape != x_k.shape or x0.shape != b.shape:
        raise ValueError("dimension mismatch")
    return np.where(b == 1, x0, x_k)


def noise_robust_inject(anchor_noisy, x_k, b, k, k_star):
    """Anchor on the (noisy) observation only while the level is at least ``k_star``."""
    anchor_noisy, x_k, b = np.asarray(anchor_noisy), np.asarray(x_k), np.asarray(b)
    if anchor_noisy.shape != x_k.shape or x_k.shape != b.shape:
        raise ValueError("dimension mismatch")
    k = np.asarray(k)
    gate = k >= k_star
    if gate.ndim:
        gate = gate[..., None]
    return np.where(gate & (b == 1), anchor_noisy, x_k)


class WindowSampler:
    """Draws training windows from a fixed set of sequences.

    Holds head-canonical poses and world-frame observation geometry;
    wrist visibility is recomputed from the field-of-view model with a
    fresh dropout draw for every sample.
    """

    def __init__(self, sequences: list[MotionSequence], synth: SynthConfig, h: int, f: int):
        if not sequences:
            raise ValueError("no training sequences")
        lengths = {len(s) for s in sequences}
        if len(lengths) != 1:
            raise ValueError("sequences must share one length")
        self.T = lengths.pop()
        if self.T < h + 1 + f:
            raise ValueError(f"sequences of {self.T} frames cannot hold a {h + 1 + f}-frame window")
        self.h, self.f, self.synth = h, f, synth
        self.canonical = np.stack([canonicalize(s.poses_world, s.head_pos, s.head_yaw) for s in sequences])
        self.head_pos = np.stack([s.head_pos for s in sequences])
        self.head_yaw = np.stack([s.head_yaw for s in sequences])
        pts = np.stack([s.poses_world for s in sequences]).reshape(len(sequences), self.T, -1, 3)
        self.wrists = pts[:, :, 1:3]
        self.in_fov = wrist_in_fov(
            self.wrists, self.head_pos[:, :, None], self.head_yaw[:, :, None], synth.fov_half_angle, synth.camera_pitch
        )
        self.dim = self.canonical.shape[-1]

    def normalizer(self):
        flat = self.canonical.reshape(-1, self.dim)
        return flat.mean(0), np.maximum(flat.std(0), SCALE_FLOOR)

    def sample(self, rng: np.random.Generator, batch: int, noise_level: float = 0.0):
        """Returns canonical windows, per-frame visibility and control-derived anchors.

        Anchors carry head (zero) and wrist components built from the
        observations, corrupted by ``noise_level`` when positive.
        """
        N = self.h + 1 + self.f
        seq = rng.integers(0, len(self.canonical), size=batch)
        start = rng.integers(0, self.T - N + 1, size=batch)
        idx = start[:, None] + np.arange(N)
        s = seq[:, None]
        windows = self.canonical[s, idx]
        vis = self.in_fov[s, idx] & (rng.random((batch, N, 2)) >= self.synth.dropout)
        head_pos, head_yaw, wrists = self.head_pos[s, idx], self.head_yaw[s, idx], self.wrists[s, idx]
        if noise_level > 0:
            sigma_t = noise_level * 0.01
            head_pos = head_pos + rng.normal(0, sigma_t, head_pos.shape)
            head_yaw = head_yaw + rng.normal(0, np.deg2rad(noise_level), head_yaw.shape)
            wrists = wrists + rng.normal(0, sigma_t, wrists.shape)
        R = yaw_rotation(head_yaw)
        local = np.einsum("bnji,bnkj->bnki", R, wrists - head_pos[:, :, None])
        anchors = np.zeros_like(windows)
        anchors[..., WRIST_LEFT] = local[:, :, 0]
        anchors[..., WRIST_RIGHT] = local[:, :, 1]
        return windows, vis.astype(np.int64), anchors


def batch_masks(vis: np.ndarray, h: int, dim: int, mode: str = "causal") -> np.ndarray:
    """Per-frame masks for a batch from per-frame visibility ``vis`` (B, N, 2)."""
    B, N, _ = vis.shape
    obs = np.zeros((B, N, dim))
    obs[..., HEAD] = 1.0
    obs[..., WRIST_LEFT] = vis[..., 0:1]
    obs[..., WRIST_RIGHT] = vis[..., 1:2]
    if mode == "offline":
        return obs
    masks = np.zeros((B, N, dim))
    masks[:, :h] = 1.0
    masks[:, h] = obs[:, h]
    return masks


def build_batch(sampler: WindowSampler, cfg: TrainConfig, sched: DiffusionSchedule, mean, scale, data_rng, noise_rng):
    """Assemble one training batch; returns ``(inputs, levels, targets)`` in normalized space."""
    nr = cfg.noise_robust
    windows, vis, anchors = sampler.sample(data_rng, cfg.batch_size, nr.l if nr.enabled else 0.0)
    x0 = (windows - mean) / scale
    anchors = (anchors - mean) / scale
    B, N, D = x0.shape
    levels = sample_noise_levels(noise_rng, cfg.h, cfg.f, cfg.K, size=B)
    eps = noise_rng.standard_normal(x0.shape)
    x_k = forward_corrupt(x0, levels, eps, sched)
    masks = batch_masks(vis, cfg.h, D, cfg.mask_mode)
    h = cfg.h
    if cfg.mask_mode == "causal":
        # control-derived anchors only exist for the current frame; history anchors on clean poses
        control_rows = slice(h, h + 1)
        if cfg.bootstrap_prob > 0:
            # stream start: no history exists yet, so history rows are unobserved
            boot = noise_rng.random(B) < cfg.bootstrap_prob
            masks[boot, :h] = 0.0
        injected = causal_inject(x0, x_k, masks)
        if cfg.history_corrupt_n > 0:
            hist_eps = noise_rng.standard_normal(x0[:, :h].shape)
            injected[:, :h] = inject_noise(x0[:, :h], cfg.history_corrupt_n, hist_eps, sched)
            levels[:, :h] = cfg.history_corrupt_n
    else:
        control_rows = slice(0, N)
        injected = x_k.copy()
    if nr.enabled:
        rows_anchor = np.where(masks[:, control_rows] == 1, anchors[:, control_rows], 0.0)
        injected[:, control_rows] = noise_robust_inject(
            rows_anchor, x_k[:, control_rows], masks[:, control_rows], levels[:, control_rows], nr.k_star
        )
    else:
        injected[:, control_rows] = causal_inject(x0[:, control_rows], x_k[:, control_rows], masks[:, control_rows])
    inputs = np.concatenate([injected, masks], axis=-1)
    return inputs, levels, x0


def make_optimizer(model: DenoiserModel, cfg: TrainConfig):
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=0.0)


def training_loss(model: DenoiserModel, inputs, levels, targets) -> torch.Tensor:
    dtype = model.inp.weight.dtype
    pred = model(torch.as_tensor(inputs, dtype=dtype), torch.as_tensor(levels, dtype=torch.int64))
    return torch.mean((pred - torch.as_tensor(targets, dtype=dtype)) ** 2)


def train_step(model: DenoiserModel, optimizer, inputs, levels, targets) -> float:
    model.train()
    loss = training_loss(model, inputs, levels, targets)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise RuntimeError("divergence: non-finite training loss")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return value


@dataclass
class TrainResult:
    model: DenoiserModel
    schedule: DiffusionSchedule
    losses: np.ndarray
    log: list


def train(
    sequences: list[MotionSequence],
    synth: SynthConfig,
    cfg: TrainConfig,
    log_path: Optional[Path] = None,
    progress: bool = False,
) -> TrainResult:
    """Train a fresh denoiser; bit-reproducible for fixed inputs on one thread."""
    torch.use_deterministic_algorithms(True)
    sched = make_schedule(cfg.K, cfg.schedule)
    sampler = WindowSampler(sequences, synth, cfg.h, cfg.f)
    model_cfg = ModelConfig(dim=sampler.dim, h=cfg.h, f=cfg.f, width=cfg.width, n_blocks=cfg.n_blocks, heads=cfg.heads)
    model = DenoiserModel(model_cfg, seed=cfg.seed)
    mean, scale = sampler.normalizer()
    model.set_normalizer(mean, scale)
    optimizer = make_optimizer(model, cfg)
    root = np.random.SeedSequence(cfg.seed)
    data_ss, noise_ss = root.spawn(2)
    data_rng, noise_rng = np.random.default_rng(data_ss), np.random.default_rng(noise_ss)

    losses, log = [], []
    writer = fh = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "wallclock"])
    t0 = time.perf_counter()
    try:
        for step in range(1, cfg.steps + 1):
            inputs, levels, targets = build_batch(sampler, cfg, sched, mean, scale, data_rng, noise_rng)
            loss = train_step(model, optimizer, inputs, levels, targets)
            losses.append(loss)
            if step % cfg.log_every == 0 or step == cfg.steps:
                elapsed = time.perf_counter() - t0
                log.append((step, loss, elapsed))
                if writer:
                    writer.writerow([step, repr(loss), f"{elapsed:.3f}"])
                if progress:
                    logger.info("step %d loss %.5f (%.0fs)", step, np.mean(losses[-cfg.log_every :]), elapsed)
    finally:
        if fh:
            fh.close()
    model.eval()
    return TrainResult(model=model, schedule=sched, losses=np.array(losses), log=log)
