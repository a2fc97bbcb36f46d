"""Ground-truth denoiser used to check engine bookkeeping independently of learning."""
from __future__ import annotations

import numpy as np

from .core import AugmentedWindow, canonicalize
from .synthgen import MotionSequence


class OracleDenoiser:
    """Returns the true canonical window around ``aug.t``.

    Offsets falling outside the sequence are clamped to its first/last
    frame. Latent space equals canonical space (identity normalization).
    """

    def __init__(self, seq: MotionSequence, h: int, f: int):
        self.canonical = canonicalize(seq.poses_world, seq.head_pos, seq.head_yaw)
        self.h, self.f = h, f
        self.calls = 0

    def __call__(self, aug: AugmentedWindow) -> np.ndarray:
        if aug.t is None:
            raise ValueError("oracle needs the window time")
        self.calls += 1
        idx = np.clip(np.arange(aug.t - self.h, aug.t + self.f + 1), 0, len(self.canonical) - 1)
        return self.canonical[idx].copy()


class CountingDenoiser:
    """Wraps a denoiser and counts evaluations."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        for name in ("normalize", "denormalize", "config"):
            if hasattr(inner, name):
                setattr(self, name, getattr(inner, name))

    def __call__(self, aug):
        self.calls += 1
        return self.inner(aug)
