"""Input validation helpers for the estimator front end."""
from __future__ import annotations

import numpy as np

from .core import ControlSignal
from .synthgen import MotionSequence


def check_pose_array(poses, dim=None, name="poses"):
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 2:
        raise ValueError(f"{name} must be 2-D (frames, D), got shape {poses.shape}")
    if poses.shape[1] % 3 or poses.shape[1] < 9:
        raise ValueError(f"{name} width {poses.shape[1]} is not 3 * (3 + J)")
    if dim is not None and poses.shape[1] != dim:
        raise ValueError(f"{name} has {poses.shape[1]} features, expected {dim}")
    if not np.all(np.isfinite(poses)):
        raise ValueError(f"{name} contains non-finite values")
    return poses


def check_sequences(X, min_length=1) -> list[MotionSequence]:
    if isinstance(X, MotionSequence):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("expected at least one sequence")
    dim = None
    for i, seq in enumerate(X):
        if not isinstance(seq, MotionSequence):
            raise TypeError(f"item {i} is {type(seq).__name__}, expected MotionSequence")
        check_pose_array(seq.poses_world, dim, name=f"sequence {i}")
        dim = seq.dim
        if len(seq) < min_length:
            raise ValueError(f"sequence {i} has {len(seq)} frames, need at least {min_length}")
    return X


def check_observations(X) -> list[ControlSignal]:
    if isinstance(X, MotionSequence):
        if X.vis is None:
            raise ValueError("sequence carries no observations")
        return X.observations()
    obs = list(X)
    if not obs:
        raise ValueError("expected at least one observation")
    for i, o in enumerate(obs):
        if not isinstance(o, ControlSignal):
            raise TypeError(f"observation {i} is {type(o).__name__}, expected ControlSignal")
        if not o.head.is_finite():
            raise ValueError(f"observation {i}: invalid pose")
    return obs
