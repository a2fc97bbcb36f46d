"""Discrete diffusion algebra with per-frame noise levels.

All functions are pure; randomness enters only through explicit ``eps``.
Level arguments may be scalars or integer arrays broadcasting against the
leading axes of the signal (one level per frame).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    K: int
    kind: str
    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.shape != (self.K + 1,) or ab[0] != 1.0:
            raise ValueError("invalid schedule")
        if not (np.all(np.diff(ab) < 0) and np.all(ab > 0)):
            raise ValueError("invalid schedule")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def sqrt_ab(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @property
    def sqrt_1m_ab(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)


def make_schedule(K: int, kind: str = "cosine") -> DiffusionSchedule:
    """Build a schedule with ``alpha_bar[0] == 1`` and ``alpha_bar[K] <= 1e-4``."""
    if int(K) != K or K < 2:
        raise ValueError("invalid schedule")
    K = int(K)
    if kind == "cosine":
        s = 0.008
        x = np.linspace(0.0, 1.0, K + 1)
        ab = np.cos((x + s) / (1 + s) * np.pi / 2) ** 2
        ab = ab / ab[0]
        # cos(pi/2) is ~0; floor the terminal level so every entry stays in (0, 1]
        ab[-1] = min(1e-5, ab[-2] / 2)
    elif kind == "linear":
        # betas spread linearly, scaled so the terminal alpha_bar lands near 1e-5
        ramp = np.linspace(0.1, 2.0, K)
        ramp *= -np.log(1e-5) / ramp.sum()
        ab = np.concatenate([[1.0], np.exp(-np.cumsum(ramp))])
    else:
        raise ValueError(f"invalid schedule kind {kind!r}")
    ab[0] = 1.0
    return DiffusionSchedule(K=K, kind=kind, alpha_bar=ab)


def _check_level(k, sched: DiffusionSchedule):
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k > sched.K):
        raise ValueError(f"diffusion level out of range [0, {sched.K}]")
    return k.astype(np.int64)


def _coef(values, k, x):
    c = values[k]
    return c[..., None] if np.ndim(c) else c


def forward_corrupt(x0, k, eps, sched: DiffusionSchedule):
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"dimension mismatch: {x0.shape} vs {eps.shape}")
    k = _check_level(k, sched)
    return _coef(sched.sqrt_ab, k, x0) * x0 + _coef(sched.sqrt_1m_ab, k, x0) * eps


def inject_noise(x, n, eps, sched: DiffusionSchedule):
    """Re-noise clean latents to level ``n`` (history stabilization)."""
    return forward_corrupt(x, n, eps, sched)


def reverse_jump(x_k, x0_pred, k, k_target, sched: DiffusionSchedule, eta: float = 0.0, eps=None):
    """Deterministic jump from level ``k`` to ``k_target`` given a clean estimate.

    Recovers the implied noise from ``x_k`` and re-combines it with
    ``x0_pred`` at the target level. Frames whose target is 0 return
    ``x0_pred`` exactly. ``eta > 0`` mixes fresh noise ``eps`` into the
    jump (DDIM-style); it is off by default.
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    if x_k.shape != x0_pred.shape:
        raise ValueError(f"dimension mismatch: {x_k.shape} vs {x0_pred.shape}")
    k = _check_level(k, sched)
    kt = _check_level(k_target, sched)
    if np.any(kt >= k):
        raise ValueError("non-contractive jump")
    ab = sched.alpha_bar
    eps_hat = (x_k - _coef(sched.sqrt_ab, k, x_k) * x0_pred) / _coef(sched.sqrt_1m_ab, k, x_k)
    dir_scale = _coef(sched.sqrt_1m_ab, kt, x_k)
    out_noise = 0.0
    if eta > 0.0:
        if eps is None:
            raise ValueError("eta > 0 requires eps")
        sigma = eta * np.sqrt((1 - ab[kt]) / (1 - ab[k]) * (1 - ab[k] / ab[kt]))
        sigma = sigma[..., None] if np.ndim(sigma) else sigma
        dir_scale = np.sqrt(np.maximum(dir_scale**2 - sigma**2, 0.0))
        out_noise = sigma * np.asarray(eps, dtype=np.float64)
    out = _coef(sched.sqrt_ab, kt, x_k) * x0_pred + dir_scale * eps_hat + out_noise
    done = kt == 0
    if np.ndim(done) == 0:
        return x0_pred.copy() if done else out
    out[done] = x0_pred[done]
    return out
