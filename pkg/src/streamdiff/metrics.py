"""Reconstruction and smoothness metrics, causality probe, mode comparison."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

JOINT_SUBSETS = {"all": None, "head": [0], "wrists": [1, 2]}


def _points(seq):
    seq = np.asarray(seq, dtype=np.float64)
    return seq.reshape(seq.shape[0], -1, 3)


def mpjpe(pred, gt, joint_subset: str = "all", skip: int = 0) -> float:
    """Mean per-joint Euclidean position error (meters), ignoring the first ``skip`` frames."""
    pred, gt = _points(pred), _points(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if joint_subset not in JOINT_SUBSETS:
        raise ValueError(f"unknown joint subset {joint_subset!r}")
    pred, gt = pred[skip:], gt[skip:]
    if len(pred) == 0:
        raise ValueError("no frames left to evaluate")
    joints = JOINT_SUBSETS[joint_subset]
    if joints is not None:
        pred, gt = pred[:, joints], gt[:, joints]
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def jerk_trace(seq, frame_rate: float) -> np.ndarray:
    """Mean-over-joints jerk magnitude per frame (third difference times fps^3)."""
    pts = _points(seq)
    if len(pts) < 4:
        raise ValueError("jerk needs at least 4 frames")
    d3 = np.diff(pts, n=3, axis=0) * frame_rate**3
    return np.linalg.norm(d3, axis=-1).mean(axis=1)


def jerk_metrics(seq, frame_rate: float) -> tuple[float, float]:
    """Peak jerk and area under the jerk curve."""
    trace = jerk_trace(seq, frame_rate)
    return float(trace.max()), float(trace.sum() / frame_rate)


def rms_motion_amplitude(canonical_poses) -> float:
    """RMS distance of head-canonical joint positions from their mean pose."""
    pts = np.concatenate([_points(p) for p in canonical_poses])
    dev = pts - pts.mean(axis=0)
    return float(np.sqrt((dev**2).sum(-1).mean()))


@dataclass
class ProbeResult:
    passed: bool
    first_divergent: Optional[int]
    t_star: int


def causality_probe(run: Callable[[list], np.ndarray], observations: list, t_star: int, perturb: Callable) -> ProbeResult:
    """Check that emitted frames up to ``t_star`` ignore observations after it.

    ``run`` maps an observation list to emitted poses with a fixed seed;
    ``perturb(t, obs)`` returns the altered observation for ``t > t_star``.
    """
    if not 0 <= t_star < len(observations):
        raise ValueError("t_star outside the sequence")
    base = np.asarray(run(list(observations)))
    altered = [perturb(t, o) if t > t_star else o for t, o in enumerate(observations)]
    other = np.asarray(run(altered))
    differs = np.any(base != other, axis=tuple(range(1, base.ndim)))
    bad = np.flatnonzero(differs)
    first = int(bad[0]) if len(bad) else None
    return ProbeResult(passed=first is None or first > t_star, first_divergent=first, t_star=t_star)


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class SequenceReport:
    index: int
    mpjpe: float
    head_pe: float
    wrist_pe: float
    pj: float
    auj: float
    evals_per_frame: float
    tick_seconds: float


REPORT_COLUMNS = ("mode", "mpjpe", "head_pe", "wrist_pe", "pj", "auj", "evals_per_frame", "tick_seconds")


@dataclass
class EvalReport:
    mode: str
    sequences: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        keys = ("mpjpe", "head_pe", "wrist_pe", "pj", "auj", "evals_per_frame", "tick_seconds")
        out = {"mode": self.mode}
        for k in keys:
            out[k] = float(np.mean([getattr(s, k) for s in self.sequences]))
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "aggregate": self.aggregate(),
            "sequences": [asdict(s) for s in self.sequences],
            "meta": self.meta,
        }


def evaluate_sequence(index, pred, gt, timing, frame_rate, skip) -> SequenceReport:
    pj, auj = jerk_metrics(np.asarray(pred)[skip:], frame_rate)
    ticks = timing[1:] or timing
    return SequenceReport(
        index=index,
        mpjpe=mpjpe(pred, gt, "all", skip),
        head_pe=mpjpe(pred, gt, "head", skip),
        wrist_pe=mpjpe(pred, gt, "wrists", skip),
        pj=pj,
        auj=auj,
        evals_per_frame=float(np.mean([r["evals"] for r in ticks])),
        tick_seconds=float(np.mean([r["seconds"] for r in ticks])),
    )


MODES = ("online", "online_no_stab", "offline_fullwindow", "resample_baseline")


def compare_modes(
    denoiser,
    sched,
    engine_cfg,
    sequences: Sequence,
    modes: Sequence[str] = MODES,
    offline_denoiser=None,
    noise_level: float = 0.0,
    seed: int = 0,
    meta: Optional[dict] = None,
) -> dict[str, EvalReport]:
    """Evaluate each inference mode on the same seed-pinned sequences.

    ``sequences`` carry ground truth and observations; with
    ``noise_level > 0`` observations are corrupted per sequence from a
    seed-derived stream shared by all modes.
    """
    from dataclasses import replace

    from .online import offline_reconstruct, run_stream
    from .synthgen import corrupt_sequence_observations, sequence_rng

    reports = {}
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        cfg = engine_cfg
        if mode == "online_no_stab":
            cfg = replace(cfg, stab_n=0)
        elif mode == "resample_baseline":
            cfg = replace(cfg, resample=True)
        report = EvalReport(mode=mode, meta=dict(meta or {}, engine=asdict(cfg), noise_level=noise_level, seed=seed))
        for i, seq in enumerate(sequences):
            noisy = corrupt_sequence_observations(seq, noise_level, sequence_rng(seed + 7919, i)) if noise_level else seq
            obs = noisy.observations()
            if mode == "offline_fullwindow":
                result = offline_reconstruct(offline_denoiser or denoiser, sched, cfg, obs, seed=seed + i)
            else:
                result = run_stream(denoiser, sched, cfg, obs, seed=seed + i)
            report.sequences.append(
                evaluate_sequence(i, result.poses, seq.poses_world, result.timing, seq.frame_rate, cfg.h)
            )
        report.meta["config_hash"] = config_hash(report.meta)
        reports[mode] = report
    return reports


def svg_line_plot(series: dict[str, Sequence[float]], title: str = "", width: int = 640, height: int = 320) -> str:
    """Minimal multi-series SVG line chart."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    pad = 40
    all_vals = np.concatenate([np.asarray(v, dtype=float) for v in series.values()]) if series else np.zeros(1)
    lo, hi = float(np.min(all_vals)), float(np.max(all_vals))
    hi = hi if hi > lo else lo + 1.0
    n = max((len(v) for v in series.values()), default=2)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="4" y="{pad}" font-family="sans-serif" font-size="10">{hi:.3g}</text>',
        f'<text x="4" y="{height - pad}" font-family="sans-serif" font-size="10">{lo:.3g}</text>',
    ]
    for c, (name, vals) in enumerate(series.items()):
        vals = np.asarray(vals, dtype=float)
        xs = pad + (width - 2 * pad) * np.arange(len(vals)) / max(n - 1, 1)
        ys = height - pad - (height - 2 * pad) * (vals - lo) / (hi - lo)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
        color = colors[c % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{width - pad - 140}" y="{pad + 14 * c}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)

