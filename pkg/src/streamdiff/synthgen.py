"""Synthetic egocentric motion: toy skeleton sequences and sparse observations.

Body motion is a sum-of-sinusoids perturbation of a head-relative rest
skeleton that travels with a smoothly walking head. The head faces the
heading of its velocity, so the head-canonical pose varies only through
the perturbation, which also moves the wrists in and out of the camera's
field of view.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import HEAD, WRIST_LEFT, WRIST_RIGHT, ControlSignal, HeadPose, yaw_rotation

# name, parent, rest offset from the head in the body frame (x left, y up, z forward)
SKELETON_TEMPLATE = (
    ("chest", "head", (0.0, -0.25, -0.05)),
    ("pelvis", "chest", (0.0, -0.75, -0.05)),
    ("elbow_left", "chest", (0.22, -0.45, 0.05)),
    ("elbow_right", "chest", (-0.22, -0.45, 0.05)),
    ("knee_left", "pelvis", (0.1, -1.2, 0.0)),
    ("knee_right", "pelvis", (-0.1, -1.2, 0.0)),
    ("ankle_left", "knee_left", (0.1, -1.6, -0.05)),
    ("ankle_right", "knee_right", (-0.1, -1.6, -0.05)),
)
WRISTS = (
    ("wrist_left", "elbow_left", (0.2, -0.55, 0.35)),
    ("wrist_right", "elbow_right", (-0.2, -0.55, 0.35)),
)
LIMB_TOLERANCE = 0.2


def skeleton(n_interior: int):
    """Joint names, parent indices and rest offsets in pose-vector order."""
    if not 0 <= n_interior <= len(SKELETON_TEMPLATE):
        raise ValueError(f"n_interior must be in [0, {len(SKELETON_TEMPLATE)}]")
    interior = list(SKELETON_TEMPLATE[:n_interior])
    names = ["head", "wrist_left", "wrist_right"] + [j[0] for j in interior]
    specs = {"head": (None, (0.0, 0.0, 0.0))}
    for name, parent, rest in interior:
        specs[name] = (parent, rest)
    for name, parent, rest in WRISTS:
        if parent not in specs:
            parent = "chest" if "chest" in specs else "head"
        specs[name] = (parent, rest)
    # templates reference earlier joints only, so a parent may still be absent
    parents = []
    for name in names:
        parent = specs[name][0]
        while parent is not None and parent not in specs:
            parent = "head"
        parents.append(-1 if parent is None else names.index(parent))
    rest = np.array([specs[n][1] for n in names], dtype=np.float64)
    return names, np.array(parents), rest


@dataclass
class SynthConfig:
    seed: int = 0
    n_frames: int = 200
    frame_rate: float = 10.0
    n_interior: int = 4
    n_harmonics: int = 3
    n_latent: int = 3
    residual_scale: float = 0.1
    freq_band: tuple = (0.2, 1.2)
    amp_band: tuple = (0.01, 0.06)
    walk_speed_band: tuple = (0.3, 1.2)
    bob_amplitude: float = 0.02
    head_height: float = 1.6
    camera_pitch: float = 0.38
    fov_half_angle: float = 0.7
    dropout: float = 0.1
    noise_level: float = 0.0

    def __post_init__(self):
        for name in ("freq_band", "amp_band", "walk_speed_band"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self):
        errors = []
        nyquist = self.frame_rate / 2
        lo, hi = self.freq_band
        if not 0 < lo <= hi:
            errors.append("freq_band: need 0 < low <= high")
        if hi >= nyquist:
            errors.append(f"freq_band: upper frequency {hi} Hz violates Nyquist ({nyquist} Hz)")
        for name in ("amp_band", "walk_speed_band"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                errors.append(f"{name}: need 0 <= low <= high")
        if self.n_frames < 1:
            errors.append("n_frames: must be positive")
        if self.n_harmonics < 1:
            errors.append("n_harmonics: must be positive")
        if self.n_latent < 1:
            errors.append("n_latent: must be positive")
        if self.residual_scale < 0:
            errors.append("residual_scale: must be non-negative")
        if not 0 <= self.dropout <= 1:
            errors.append("dropout: must lie in [0, 1]")
        if not 0 <= self.fov_half_angle <= np.pi:
            errors.append("fov_half_angle: must lie in [0, pi]")
        if self.noise_level < 0:
            errors.append("noise_level: must be non-negative")
        if not 0 <= self.n_interior <= len(SKELETON_TEMPLATE):
            errors.append(f"n_interior: must lie in [0, {len(SKELETON_TEMPLATE)}]")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def dim(self) -> int:
        return 3 * (3 + self.n_interior)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class MotionSequence:
    """World-frame motion plus (optionally) the sparse observations of it."""

    poses_world: np.ndarray
    head_pos: np.ndarray
    head_yaw: np.ndarray
    wrists: Optional[np.ndarray] = None
    vis: Optional[np.ndarray] = None
    frame_rate: float = 10.0
    info: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.poses_world)

    @property
    def dim(self) -> int:
        return self.poses_world.shape[1]

    def observation(self, t: int) -> ControlSignal:
        if self.vis is None:
            raise ValueError("sequence carries no observations")
        vl, vr = (int(v) for v in self.vis[t])
        return ControlSignal(
            head=HeadPose(self.head_pos[t], self.head_yaw[t]),
            wrist_left=self.wrists[t, 0] if vl else None,
            wrist_right=self.wrists[t, 1] if vr else None,
            vis_left=vl,
            vis_right=vr,
        )

    def observations(self):
        return [self.observation(t) for t in range(len(self))]

    def slice(self, start: int, stop: int) -> "MotionSequence":
        return MotionSequence(
            poses_world=self.poses_world[start:stop],
            head_pos=self.head_pos[start:stop],
            head_yaw=self.head_yaw[start:stop],
            wrists=None if self.wrists is None else self.wrists[start:stop],
            vis=None if self.vis is None else self.vis[start:stop],
            frame_rate=self.frame_rate,
        )


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def _topological(parents) -> list[int]:
    """Non-root joints ordered so every parent precedes its children."""
    depth = np.zeros(len(parents), dtype=int)
    for j in range(len(parents)):
        p = parents[j]
        while p >= 0:
            depth[j] += 1
            p = parents[p]
    return [int(j) for j in np.argsort(depth, kind="stable") if parents[j] >= 0]


_SYNERGY_SEED = 20240607


def synergy_matrix(n_joints: int, n_latent: int) -> np.ndarray:
    """Fixed joint-by-axis-by-channel mixing weights with unit-norm channel columns.

    Shared by every sequence, so observing a few joints pins down the latent
    channels and with them the rest of the body. The head row is zero.
    """
    w = np.random.default_rng(_SYNERGY_SEED).normal(size=(n_joints, 3, n_latent))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    w[0] = 0.0
    return w


def _joint_scales(cfg: "SynthConfig", parents, rest) -> np.ndarray:
    """Per-joint gain keeping the worst-case local displacement within the limb tolerance."""
    J = len(parents)
    mix = np.abs(synergy_matrix(J, cfg.n_latent))
    peak = cfg.n_harmonics * cfg.amp_band[1]
    scale = np.zeros(J)
    for j in range(1, J):
        per_axis = peak * (mix[j].sum(axis=1) + cfg.residual_scale)
        worst = np.linalg.norm(per_axis)
        cap = 0.95 * LIMB_TOLERANCE * np.linalg.norm(rest[j] - rest[parents[j]])
        scale[j] = 1.0 if worst <= cap else cap / worst
    return scale


def _harmonics(rng, n, shape, freq_band, amp_band):
    freqs = rng.uniform(*freq_band, size=(n,) + shape)
    amps = rng.uniform(*amp_band, size=(n,) + shape)
    phases = rng.uniform(0, 2 * np.pi, size=(n,) + shape)
    return 2 * np.pi * freqs, amps, phases


def _sines(t, omega, amp, phase):
    # sum over the harmonic axis; t has shape (T,)
    arg = omega[None] * t.reshape((-1,) + (1,) * omega.ndim) + phase[None]
    return (amp[None] * np.sin(arg)).sum(axis=1)


def generate_sequence(cfg: SynthConfig, rng: np.random.Generator) -> MotionSequence:
    cfg.validate()
    T, dt = cfg.n_frames, 1.0 / cfg.frame_rate
    t = np.arange(T) * dt
    names, parents, rest = skeleton(cfg.n_interior)
    J = len(names)
    H = cfg.n_harmonics

    # walking: constant drift plus band-limited velocity wobble, integrated analytically
    speed = rng.uniform(*cfg.walk_speed_band)
    heading0 = rng.uniform(-np.pi, np.pi)
    w_om, w_amp, w_ph = _harmonics(rng, H, (2,), (cfg.freq_band[0], cfg.freq_band[0] * 2), (0.0, 0.25 / H))
    w_amp = w_amp * speed
    vel = speed * np.stack([np.sin(heading0), np.cos(heading0)]) + _sines(t, w_om, w_amp, w_ph)
    disp = (w_amp / w_om)[None] * (np.cos(w_ph)[None] - np.cos(w_om[None] * t[:, None, None] + w_ph[None]))
    pos_xz = rng.uniform(-1, 1, size=2) + speed * t[:, None] * np.stack([np.sin(heading0), np.cos(heading0)]) + disp.sum(1)
    b_om, b_amp, b_ph = _harmonics(rng, 1, (), cfg.freq_band, (cfg.bob_amplitude, cfg.bob_amplitude))
    head_y = cfg.head_height + _sines(t, b_om, b_amp, b_ph)
    head_pos = np.stack([pos_xz[:, 0], head_y, pos_xz[:, 1]], axis=-1)
    # drift dominates the wobble, so the heading of the velocity is smooth
    yaw = np.unwrap(np.arctan2(vel[:, 0], vel[:, 1]))
    head_yaw = wrap_angle(yaw)

    # joint-local perturbations: a few shared latent channels drive every joint
    # through a fixed mixing matrix (coordinated motion), plus small independent
    # residuals; accumulated down the kinematic tree
    scale = _joint_scales(cfg, parents, rest)
    mix = synergy_matrix(J, cfg.n_latent) * scale[:, None, None]
    z_om, z_amp, z_ph = _harmonics(rng, H, (cfg.n_latent,), cfg.freq_band, cfg.amp_band)
    r_om, r_amp, r_ph = _harmonics(rng, H, (J, 3), cfg.freq_band, cfg.amp_band)
    r_amp = r_amp * cfg.residual_scale * scale[None, :, None]
    latent = _sines(t, z_om, z_amp, z_ph)  # (T, n_latent)
    local = np.einsum("jac,tc->tja", mix, latent) + _sines(t, r_om, r_amp, r_ph)
    perturb = np.zeros_like(local)
    for j in _topological(parents):
        perturb[:, j] = perturb[:, parents[j]] + local[:, j]
    body_local = rest[None] + perturb
    R = yaw_rotation(yaw)
    joints = np.einsum("tij,tkj->tki", R, body_local) + head_pos[:, None, :]
    joints[:, 0] = head_pos

    seq = MotionSequence(
        poses_world=joints.reshape(T, 3 * J),
        head_pos=head_pos,
        head_yaw=head_yaw,
        frame_rate=cfg.frame_rate,
    )
    seq.info = {
        "perturbation": perturb,
        "latent": (z_om, z_amp, z_ph),
        "mix": mix,
        "residual": (r_om, r_amp, r_ph),
        "parents": parents,
        "rest": rest,
    }
    return seq


def jerk_bound(seq: MotionSequence) -> np.ndarray:
    """Per-joint, per-axis analytic bound on the perturbation jerk: the sum of
    ``|A| * omega**3`` over every sinusoid reaching the joint (own and ancestors')."""
    z_om, z_amp, _ = seq.info["latent"]
    r_om, r_amp, _ = seq.info["residual"]
    parents = seq.info["parents"]
    latent = (z_amp * z_om**3).sum(axis=0)  # (n_latent,)
    own = np.abs(seq.info["mix"]) @ latent + (r_amp * r_om**3).sum(axis=0)  # (J, 3)
    total = np.zeros_like(own)
    for j in _topological(parents):
        total[j] = total[parents[j]] + own[j]
    return total


def limb_lengths(seq: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame joint-to-parent distances and their nominal rest values."""
    parents, rest = seq.info["parents"], seq.info["rest"]
    pts = seq.poses_world.reshape(len(seq), -1, 3)
    idx = np.arange(1, len(parents))
    actual = np.linalg.norm(pts[:, idx] - pts[:, parents[idx]], axis=-1)
    nominal = np.linalg.norm(rest[idx] - rest[parents[idx]], axis=-1)
    return actual, nominal


def camera_forward(pitch: float) -> np.ndarray:
    return np.array([0.0, -np.sin(pitch), np.cos(pitch)])


def wrist_in_fov(wrist_world, head_pos, head_yaw, fov_half_angle, pitch):
    """Whether each wrist lies strictly inside the field-of-view cone."""
    rel = np.asarray(wrist_world) - np.asarray(head_pos)
    R = yaw_rotation(head_yaw)
    local = np.einsum("...ji,...j->...i", R, rel)
    cosang = local @ camera_forward(pitch) / np.maximum(np.linalg.norm(local, axis=-1), 1e-12)
    angle = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angle < fov_half_angle


def extract_observations(seq: MotionSequence, cfg: SynthConfig, rng: np.random.Generator) -> MotionSequence:
    """Attach head poses and FOV/dropout-gated wrist observations to ``seq``."""
    T = len(seq)
    pts = seq.poses_world.reshape(T, -1, 3)
    wrists = np.stack([pts[:, 1], pts[:, 2]], axis=1)
    in_fov = wrist_in_fov(wrists, seq.head_pos[:, None], seq.head_yaw[:, None], cfg.fov_half_angle, cfg.camera_pitch)
    kept = rng.random((T, 2)) >= cfg.dropout
    vis = (in_fov & kept).astype(np.int64)
    obs_wrists = np.where(vis[..., None] == 1, wrists, np.nan)
    return MotionSequence(
        poses_world=seq.poses_world,
        head_pos=seq.head_pos.copy(),
        head_yaw=seq.head_yaw.copy(),
        wrists=obs_wrists,
        vis=vis,
        frame_rate=seq.frame_rate,
        info=seq.info,
    )


def corrupt_observations(signal: ControlSignal, level: float, rng: np.random.Generator) -> ControlSignal:
    """Add zero-mean noise: ``level`` cm per translational axis, ``level`` degrees of yaw."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return signal
    sigma_t, sigma_r = level * 0.01, np.deg2rad(level)
    head = HeadPose(
        signal.head.position + rng.normal(0.0, sigma_t, 3),
        float(wrap_angle(signal.head.yaw + rng.normal(0.0, sigma_r))),
    )
    noise = rng.normal(0.0, sigma_t, (2, 3))
    return ControlSignal(
        head=head,
        wrist_left=signal.wrist_left + noise[0] if signal.vis_left else None,
        wrist_right=signal.wrist_right + noise[1] if signal.vis_right else None,
        vis_left=signal.vis_left,
        vis_right=signal.vis_right,
    )


def corrupt_sequence_observations(seq: MotionSequence, level: float, rng: np.random.Generator) -> MotionSequence:
    """Vectorized :func:`corrupt_observations` over every frame of ``seq``."""
    if level == 0:
        return seq
    T = len(seq)
    sigma_t, sigma_r = level * 0.01, np.deg2rad(level)
    head_pos = seq.head_pos + rng.normal(0.0, sigma_t, (T, 3))
    head_yaw = wrap_angle(seq.head_yaw + rng.normal(0.0, sigma_r, T))
    wrists = seq.wrists + rng.normal(0.0, sigma_t, (T, 2, 3))
    return MotionSequence(
        poses_world=seq.poses_world,
        head_pos=head_pos,
        head_yaw=head_yaw,
        wrists=wrists,  # NaN stays NaN for invisible wrists
        vis=seq.vis,
        frame_rate=seq.frame_rate,
        info=seq.info,
    )


def sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_dataset(cfg: SynthConfig, n_sequences: int, offset: int = 0) -> list[MotionSequence]:
    """Seed-pinned dataset; sequence ``i`` depends only on ``(cfg.seed, offset + i)``."""
    out = []
    for i in range(n_sequences):
        rng = sequence_rng(cfg.seed, offset + i)
        seq = generate_sequence(cfg, rng)
        out.append(extract_observations(seq, cfg, rng))
    return out


__all__ = [
    "HEAD",
    "WRIST_LEFT",
    "WRIST_RIGHT",
    "SynthConfig",
    "MotionSequence",
    "generate_sequence",
    "extract_observations",
    "corrupt_observations",
    "corrupt_sequence_observations",
    "generate_dataset",
    "jerk_bound",
    "limb_lengths",
    "skeleton",
    "sequence_rng",
    "wrist_in_fov",
]
