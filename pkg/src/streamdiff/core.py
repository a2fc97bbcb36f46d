"""Shared domain types: pose layout, head poses, control signals, windows.

Pose vectors are flat arrays of joint positions in meters. The layout is
fixed: head (3), left wrist (3), right wrist (3), then ``J`` interior
joints (3 each). World coordinates are y-up; the head-canonical frame is
centered on the head with +z pointing along the head's heading.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

HEAD = slice(0, 3)
WRIST_LEFT = slice(3, 6)
WRIST_RIGHT = slice(6, 9)
N_OBSERVED = 9


def pose_dim(n_interior: int = 4) -> int:
    return 3 * (3 + n_interior)


def n_joints(dim: int) -> int:
    if dim % 3 or dim < N_OBSERVED:
        raise ValueError(f"invalid pose dimension {dim}")
    return dim // 3


@dataclass(frozen=True)
class HeadPose:
    """Planar rigid head pose: 3D position plus heading (yaw about +y)."""

    position: np.ndarray
    yaw: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "yaw", float(self.yaw))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.position)) and np.isfinite(self.yaw))


@dataclass(frozen=True)
class ControlSignal:
    """Sparse observation at one time step: head pose and visible wrists."""

    head: HeadPose
    wrist_left: Optional[np.ndarray] = None
    wrist_right: Optional[np.ndarray] = None
    vis_left: int = 0
    vis_right: int = 0

    def __post_init__(self):
        for name in ("vis_left", "vis_right"):
            v = int(getattr(self, name))
            if v not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1, got {v}")
            object.__setattr__(self, name, v)
        for name, vis in (("wrist_left", self.vis_left), ("wrist_right", self.vis_right)):
            w = getattr(self, name)
            if not vis:
                object.__setattr__(self, name, None)
            elif w is None:
                raise ValueError(f"{name} is visible but carries no position")
            else:
                object.__setattr__(self, name, np.asarray(w, dtype=np.float64).reshape(3))

    @property
    def vis(self) -> tuple[int, int]:
        return self.vis_left, self.vis_right


def yaw_rotation(yaw):
    """Rotation matrices about +y, shape ``yaw.shape + (3, 3)``.

    Maps the canonical forward axis +z onto ``(sin yaw, 0, cos yaw)``.
    """
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    z, o = np.zeros_like(yaw), np.ones_like(yaw)
    return np.stack(
        [np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)],
        -2,
    )


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("invalid pose")


def canonicalize(pose_world, head_position, head_yaw):
    """Express world-frame poses in the head-canonical frame.

    Broadcasts over leading axes: ``pose_world`` is ``(..., D)``,
    ``head_position`` is ``(..., 3)`` and ``head_yaw`` is ``(...)``.
    """
    pose_world = np.asarray(pose_world, dtype=np.float64)
    head_position = np.asarray(head_position, dtype=np.float64)
    head_yaw = np.asarray(head_yaw, dtype=np.float64)
    _check_finite(pose_world, head_position, head_yaw)
    J = n_joints(pose_world.shape[-1])
    pts = pose_world.reshape(pose_world.shape[:-1] + (J, 3))
    rel = pts - head_position[..., None, :]
    R = yaw_rotation(head_yaw)
    # rows of R^T applied to each point: out_i = sum_j R[j, i] rel_j
    out = np.einsum("...ji,...kj->...ki", R, rel)
    return out.reshape(pose_world.shape)


def decanonicalize(pose_canonical, head_position, head_yaw):
    """Inverse of :func:`canonicalize`."""
    pose_canonical = np.asarray(pose_canonical, dtype=np.float64)
    head_position = np.asarray(head_position, dtype=np.float64)
    head_yaw = np.asarray(head_yaw, dtype=np.float64)
    _check_finite(pose_canonical, head_position, head_yaw)
    J = n_joints(pose_canonical.shape[-1])
    pts = pose_canonical.reshape(pose_canonical.shape[:-1] + (J, 3))
    R = yaw_rotation(head_yaw)
    out = np.einsum("...ij,...kj->...ki", R, pts) + head_position[..., None, :]
    return out.reshape(pose_canonical.shape)


def canonical_anchor(signal: ControlSignal, dim: int) -> np.ndarray:
    """Pose vector carrying the observed components of ``signal``.

    Head components are zero (head-centered frame); visible wrists are
    expressed relative to the observed head. Unobserved components are 0
    and must be masked out by the caller.
    """
    anchor = np.zeros(dim)
    head = signal.head
    R = yaw_rotation(head.yaw)
    if signal.vis_left:
        anchor[WRIST_LEFT] = R.T @ (signal.wrist_left - head.position)
    if signal.vis_right:
        anchor[WRIST_RIGHT] = R.T @ (signal.wrist_right - head.position)
    return anchor


def observation_mask(dim: int, vis_left: int, vis_right: int) -> np.ndarray:
    m = np.zeros(dim)
    m[HEAD] = 1.0
    m[WRIST_LEFT] = float(vis_left)
    m[WRIST_RIGHT] = float(vis_right)
    return m


def causal_masks(h: int, f: int, dim: int, vis_left: int, vis_right: int) -> np.ndarray:
    """Masks for the online information structure over offsets ``-h..f``.

    History rows are all ones, the current row carries head plus visible
    wrists, future rows are zero.
    """
    masks = np.zeros((h + 1 + f, dim))
    masks[:h] = 1.0
    masks[h] = observation_mask(dim, vis_left, vis_right)
    return masks


@dataclass(frozen=True)
class Window:
    """Latent poses, per-frame diffusion levels and masks over offsets ``-h..f``."""

    frames: np.ndarray
    levels: np.ndarray
    masks: np.ndarray
    h: int
    f: int

    def __post_init__(self):
        n = self.h + 1 + self.f
        frames = np.asarray(self.frames, dtype=np.float64)
        masks = np.asarray(self.masks, dtype=np.float64)
        levels = np.asarray(self.levels, dtype=np.int64)
        if frames.ndim != 2 or frames.shape[0] != n:
            raise ValueError(f"window must hold {n} frames, got shape {frames.shape}")
        if masks.shape != frames.shape or levels.shape != (n,):
            raise ValueError("masks/levels do not match window frames")
        if not np.all((masks == 0) | (masks == 1)):
            raise ValueError("masks must be binary")
        if np.any(levels < 0):
            raise ValueError("negative diffusion level")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "levels", levels)

    @property
    def size(self) -> int:
        return self.h + 1 + self.f


@dataclass(frozen=True)
class AugmentedWindow:
    """Denoiser input: per-frame ``[pose; mask]`` rows plus levels.

    ``context`` is an optional feature matrix (one row per past/current
    frame); ``t`` is the absolute time of offset 0, carried as metadata
    for instrumented denoisers and ignored by the network.
    """

    inputs: np.ndarray
    levels: np.ndarray
    context: Optional[np.ndarray] = None
    t: Optional[int] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.inputs.shape[-1] // 2


def assemble_augmented(window: Window, context=None, t=None) -> AugmentedWindow:
    inputs = np.concatenate([window.frames, window.masks], axis=-1)
    return AugmentedWindow(inputs=inputs, levels=window.levels.copy(), context=context, t=t)
