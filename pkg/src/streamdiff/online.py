"""Streaming inference: a rolling window of partially denoised latents.

Each tick shifts the window by one frame, appends a fresh pure-noise
terminal latent, injects the newest observation, and runs a single
denoiser evaluation that lowers every frame's diffusion level by ``dk``.
The current frame reaches level 0 and is emitted; future frames stay on
the monotone schedule ``i * dk`` and serve as warm starts for later ticks.

The engine works on latents in the denoiser's normalized space. A
denoiser is any callable ``aug -> (N, D) clean latents``; if it exposes
``normalize``/``denormalize`` they map canonical poses to latents and back.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .core import (
    AugmentedWindow,
    ControlSignal,
    Window,
    assemble_augmented,
    canonical_anchor,
    causal_masks,
    decanonicalize,
    observation_mask,
)
from .diffusion import DiffusionSchedule, inject_noise, reverse_jump

Denoiser = Callable[[AugmentedWindow], np.ndarray]

# substream tags for counter-derived randomness
_TERMINAL, _STAB, _ETA, _INIT = 0, 1, 2, 3


class EngineStateError(RuntimeError):
    pass


def future_noise_schedule(f: int, K: int) -> np.ndarray:
    """Levels ``[0, dk, ..., f*dk]`` for offsets ``0..f`` with ``dk = K / (f + 1)``."""
    if f < 0 or K < 1 or K % (f + 1):
        raise ValueError(f"invalid horizon: f + 1 = {f + 1} must divide K = {K}")
    return np.arange(f + 1, dtype=np.int64) * (K // (f + 1))


@dataclass(frozen=True)
class EngineConfig:
    h: int = 5
    f: int = 19
    K: int = 100
    stab_n: int = 2
    refine_passes: int = 1
    noise_robust: bool = False
    k_star: int = 3
    eta: float = 0.0
    resample: bool = False

    def __post_init__(self):
        errors = []
        if self.h < 0 or self.f < 0:
            errors.append("h and f must be non-negative")
        if self.K < 2 or self.K % (self.f + 1):
            errors.append(f"invalid horizon: f + 1 = {self.f + 1} must divide K = {self.K}")
        elif self.refine_passes < 1 or self.dk % self.refine_passes:
            errors.append(f"refine_passes must divide dk = {self.dk}")
        if not 0 <= self.stab_n <= self.K:
            errors.append("stab_n must lie in [0, K]")
        if not 0 <= self.k_star <= self.K:
            errors.append("k_star must lie in [0, K]")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def dk(self) -> int:
        return self.K // (self.f + 1)

    @property
    def size(self) -> int:
        return self.h + 1 + self.f

    def canonical_levels(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.h, dtype=np.int64), future_noise_schedule(self.f, self.K)])


@dataclass(frozen=True)
class EngineState:
    """Persistent streaming state. ``anchors`` hold the clean frames for offsets ``-h..0``."""

    config: EngineConfig
    window: Window
    anchors: np.ndarray
    t: int
    seed: int
    evals: int = 0

    def check(self):
        if not np.array_equal(self.window.levels, self.config.canonical_levels()):
            raise EngineStateError("corrupt engine state: levels off schedule")
        if not np.all(np.isfinite(self.window.frames)):
            raise EngineStateError("corrupt engine state: non-finite latent")


def _rng(seed: int, t: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(t), tag]))


def _to_latent(denoiser, poses):
    fn = getattr(denoiser, "normalize", None)
    return np.asarray(fn(poses) if fn else poses, dtype=np.float64)


def _from_latent(denoiser, latents):
    fn = getattr(denoiser, "denormalize", None)
    return np.asarray(fn(latents) if fn else latents, dtype=np.float64)


def _observation_anchor(denoiser, obs: ControlSignal, dim: int):
    mask = observation_mask(dim, obs.vis_left, obs.vis_right)
    anchor = _to_latent(denoiser, canonical_anchor(obs, dim))
    return np.where(mask == 1, anchor, 0.0), mask


def _inject_current(cfg: EngineConfig, frames, levels, row, anchor, mask):
    """Anchor observed components of ``frames[row]`` (K* gated in noise-robust mode)."""
    if cfg.noise_robust and levels[row] < cfg.k_star:
        return
    frames[row] = np.where(mask == 1, anchor, frames[row])


def _denoise_pass(
    denoiser,
    sched,
    cfg: EngineConfig,
    frames,
    levels,
    masks,
    targets,
    step,
    t,
    rng_stab,
    rng_eta,
    context,
):
    """One denoiser evaluation; frames above their target drop ``step`` levels."""
    in_frames, in_levels = frames.copy(), levels.copy()
    clean = (levels == 0) & (masks.min(axis=1) == 1)
    if cfg.stab_n > 0 and clean.any():
        eps = rng_stab.standard_normal(frames[clean].shape)
        in_frames[clean] = inject_noise(frames[clean], cfg.stab_n, eps, sched)
        in_levels[clean] = cfg.stab_n
    window = Window(frames=in_frames, levels=in_levels, masks=masks, h=cfg.h, f=cfg.f)
    x0 = np.asarray(denoiser(assemble_augmented(window, context=context, t=t)), dtype=np.float64)
    if x0.shape != frames.shape or not np.all(np.isfinite(x0)):
        raise EngineStateError("corrupt engine state: denoiser returned invalid output")
    new_frames, new_levels = frames.copy(), levels.copy()
    move = levels > targets
    if move.any():
        nxt = np.maximum(levels[move] - step, targets[move])
        eps = rng_eta.standard_normal(frames[move].shape) if cfg.eta > 0 else None
        new_frames[move] = reverse_jump(in_frames[move], x0[move], in_levels[move], nxt, sched, cfg.eta, eps)
        new_levels[move] = nxt
    if cfg.stab_n > 0 and clean.any():
        new_frames[clean] = reverse_jump(in_frames[clean], x0[clean], in_levels[clean], 0, sched)
    return new_frames, new_levels


def _emit(denoiser, latent, obs: ControlSignal):
    canonical = _from_latent(denoiser, latent)
    return decanonicalize(canonical, obs.head.position, obs.head.yaw)


def _denoise_to_schedule(denoiser, sched, cfg, frames, levels, masks, anchor, obs_mask, t, seed, context):
    """Run passes until ``levels`` reach the canonical schedule; returns evals used."""
    targets = cfg.canonical_levels()
    step = cfg.dk // cfg.refine_passes
    rng_stab, rng_eta = _rng(seed, t, _STAB), _rng(seed, t, _ETA)
    evals = 0
    while np.any(levels > targets):
        _inject_current(cfg, frames, levels, cfg.h, anchor, obs_mask)
        frames, levels = _denoise_pass(
            denoiser, sched, cfg, frames, levels, masks, targets, step, t, rng_stab, rng_eta, context
        )
        evals += 1
    # anchoring also holds at level 0; noise-robust mode skips it below K*
    _inject_current(cfg, frames, levels, cfg.h, anchor, obs_mask)
    return frames, levels, evals


def init_stream(
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    cfg: EngineConfig,
    first_obs: ControlSignal,
    seed: int = 0,
    dim: Optional[int] = None,
    context=None,
):
    """Bootstrap a stream from pure noise; returns ``(emitted world pose, state)``.

    No history exists yet, so history slots are treated as unobserved and
    the denoiser fills them with a prefix consistent with ``first_obs``.
    """
    if sched.K != cfg.K:
        raise ValueError("schedule K does not match engine config")
    dim = dim or getattr(getattr(denoiser, "config", None), "dim", None) or 21
    frames = _rng(seed, 0, _INIT).standard_normal((cfg.size, dim))
    levels = np.full(cfg.size, cfg.K, dtype=np.int64)
    masks = np.zeros((cfg.size, dim))
    anchor, obs_mask = _observation_anchor(denoiser, first_obs, dim)
    masks[cfg.h] = obs_mask
    frames, levels, evals = _denoise_to_schedule(
        denoiser, sched, cfg, frames, levels, masks, anchor, obs_mask, 0, seed, context
    )
    window = Window(frames=frames, levels=levels, masks=masks, h=cfg.h, f=cfg.f)
    state = EngineState(cfg, window, anchors=frames[: cfg.h + 1].copy(), t=0, seed=seed, evals=evals)
    state.check()
    return _emit(denoiser, frames[cfg.h], first_obs), state


def tick(
    state: EngineState,
    obs: ControlSignal,
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    context=None,
):
    """Advance the stream by one observation; returns ``(emitted world pose, new state)``."""
    state.check()
    cfg = state.config
    t = state.t + 1
    dim = state.window.frames.shape[1]

    # 1. shift and append a pure-noise terminal frame
    noise = _rng(state.seed, t, _TERMINAL).standard_normal(dim)
    frames = np.vstack([state.window.frames[1:], noise[None]])
    levels = np.concatenate([state.window.levels[1:], [cfg.K]])
    anchors = state.anchors[1:]

    # 2. history anchored on emitted frames, current frame on the observation
    masks = causal_masks(cfg.h, cfg.f, dim, obs.vis_left, obs.vis_right)
    anchor, obs_mask = _observation_anchor(denoiser, obs, dim)
    frames[: cfg.h] = anchors
    if cfg.resample:
        # compute baseline: discard warm starts and denoise from scratch
        frames[cfg.h :] = _rng(state.seed, t, _INIT).standard_normal((cfg.f + 1, dim))
        levels[cfg.h :] = cfg.K

    # 3. progressive refinement (stabilization noise applied inside each pass)
    frames, levels, evals = _denoise_to_schedule(
        denoiser, sched, cfg, frames, levels, masks, anchor, obs_mask, t, state.seed, context
    )
    current = frames[cfg.h].copy()
    window = Window(frames=frames, levels=levels, masks=masks, h=cfg.h, f=cfg.f)
    new = replace(
        state,
        window=window,
        anchors=np.vstack([anchors, current[None]]),
        t=t,
        evals=state.evals + evals,
    )
    new.check()
    return _emit(denoiser, current, obs), new


@dataclass
class StreamResult:
    poses: np.ndarray
    timing: list = field(default_factory=list)

    @property
    def evals_per_frame(self) -> np.ndarray:
        return np.array([row["evals"] for row in self.timing])


def run_stream(
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    cfg: EngineConfig,
    observations: Iterable[ControlSignal],
    seed: int = 0,
    dim: Optional[int] = None,
    on_frame: Optional[Callable[[int, np.ndarray], None]] = None,
    keep: bool = True,
) -> StreamResult:
    """Drive the engine over an observation iterator: one emitted pose per observation.

    ``on_frame(t, pose)`` is called as each frame is emitted; pass
    ``keep=False`` to avoid holding the full output in memory.
    """
    it = iter(observations)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("observation stream is empty") from None
    timing, poses = [], []
    start = time.perf_counter()
    pose, state = init_stream(denoiser, sched, cfg, first, seed=seed, dim=dim)
    timing.append({"t": 0, "evals": state.evals, "seconds": time.perf_counter() - start})

    def _out(t, pose):
        if on_frame is not None:
            on_frame(t, pose)
        if keep:
            poses.append(pose)

    _out(0, pose)
    for obs in it:
        start = time.perf_counter()
        before = state.evals
        pose, state = tick(state, obs, denoiser, sched)
        timing.append({"t": state.t, "evals": state.evals - before, "seconds": time.perf_counter() - start})
        _out(state.t, pose)
    return StreamResult(poses=np.array(poses) if keep else np.empty((0,)), timing=timing)


def offline_reconstruct(
    denoiser: Denoiser,
    sched: DiffusionSchedule,
    cfg: EngineConfig,
    observations: list,
    seed: int = 0,
    dim: Optional[int] = None,
) -> StreamResult:
    """Non-causal reference: each frame is denoised from scratch inside a window
    whose every frame carries its own observation (head plus visible wrists)."""
    dim = dim or getattr(getattr(denoiser, "config", None), "dim", None) or 21
    T, N = len(observations), cfg.size
    anchors = np.zeros((T, dim))
    obs_masks = np.zeros((T, dim))
    for i, obs in enumerate(observations):
        anchors[i], obs_masks[i] = _observation_anchor(denoiser, obs, dim)
    step = cfg.dk
    poses, timing = [], []
    for t in range(T):
        start = time.perf_counter()
        idx = np.arange(t - cfg.h, t + cfg.f + 1)
        inside = (idx >= 0) & (idx < T)
        masks = np.zeros((N, dim))
        anc = np.zeros((N, dim))
        masks[inside] = obs_masks[idx[inside]]
        anc[inside] = anchors[idx[inside]]
        frames = _rng(seed, t, _INIT).standard_normal((N, dim))
        levels = np.full(N, cfg.K, dtype=np.int64)
        targets = np.zeros(N, dtype=np.int64)
        evals = 0
        while np.any(levels > 0):
            if not (cfg.noise_robust and levels[0] < cfg.k_star):
                frames = np.where(masks == 1, anc, frames)
            window = Window(frames=frames, levels=levels, masks=masks, h=cfg.h, f=cfg.f)
            x0 = np.asarray(denoiser(assemble_augmented(window, t=t)), dtype=np.float64)
            nxt = np.maximum(levels - step, targets)
            frames = reverse_jump(frames, x0, levels, nxt, sched)
            levels = nxt
            evals += 1
        poses.append(_emit(denoiser, frames[cfg.h], observations[t]))
        timing.append({"t": t, "evals": evals, "seconds": time.perf_counter() - start})
    return StreamResult(poses=np.array(poses), timing=timing)
