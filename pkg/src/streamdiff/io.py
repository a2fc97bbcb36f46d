"""JSON Lines sequence files and dataset manifests."""
from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from .core import ControlSignal, HeadPose
from .synthgen import MotionSequence


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def frame_record(seq: MotionSequence, t: int) -> dict:
    rec = {
        "t": int(t),
        "pose_world": _floats(seq.poses_world[t]),
        "head": {"p": _floats(seq.head_pos[t]), "yaw": float(seq.head_yaw[t])},
        "wl": None,
        "wr": None,
        "vl": 0,
        "vr": 0,
    }
    if seq.vis is not None:
        vl, vr = (int(v) for v in seq.vis[t])
        rec.update(vl=vl, vr=vr)
        if vl:
            rec["wl"] = _floats(seq.wrists[t, 0])
        if vr:
            rec["wr"] = _floats(seq.wrists[t, 1])
    return rec


def dumps(rec: dict) -> str:
    # json emits the shortest repr that round-trips a float64 exactly
    return json.dumps(rec, separators=(",", ":"), allow_nan=False)


def write_sequence(seq: MotionSequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t in range(len(seq)):
            fh.write(dumps(frame_record(seq, t)) + "\n")
    return path


def parse_observation(rec: dict) -> ControlSignal:
    try:
        head = HeadPose(rec["head"]["p"], rec["head"]["yaw"])
        vl, vr = int(rec.get("vl", 0)), int(rec.get("vr", 0))
        return ControlSignal(
            head=head,
            wrist_left=rec.get("wl") if vl else None,
            wrist_right=rec.get("wr") if vr else None,
            vis_left=vl,
            vis_right=vr,
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed observation record: {exc}") from exc


def iter_records(fh: IO[str]) -> Iterator[dict]:
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line:
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from exc


def iter_observations(fh: IO[str]) -> Iterator[ControlSignal]:
    for rec in iter_records(fh):
        yield parse_observation(rec)


def read_sequence(path, frame_rate: float = 10.0) -> MotionSequence:
    with open(path) as fh:
        records = list(iter_records(fh))
    if not records:
        raise ValueError(f"{path}: empty sequence file")
    if any(r.get("pose_world") is None for r in records):
        raise ValueError(f"{path}: every record needs pose_world")
    T = len(records)
    wrists = np.full((T, 2, 3), np.nan)
    vis = np.zeros((T, 2), dtype=np.int64)
    for i, r in enumerate(records):
        vis[i] = int(r.get("vl", 0)), int(r.get("vr", 0))
        if vis[i, 0]:
            wrists[i, 0] = r["wl"]
        if vis[i, 1]:
            wrists[i, 1] = r["wr"]
    return MotionSequence(
        poses_world=np.array([r["pose_world"] for r in records], dtype=np.float64),
        head_pos=np.array([r["head"]["p"] for r in records], dtype=np.float64),
        head_yaw=np.array([r["head"]["yaw"] for r in records], dtype=np.float64),
        wrists=wrists,
        vis=vis,
        frame_rate=frame_rate,
    )


def write_manifest(path, splits: dict[str, Iterable[str]], config: dict, config_hash: str) -> Path:
    manifest = {
        "config_hash": config_hash,
        "config": config,
        "splits": {name: list(files) for name, files in splits.items()},
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except OSError as exc:
        raise FileNotFoundError(f"cannot read manifest {path}") from exc
    manifest["root"] = str(path.parent)
    return manifest


def load_split(manifest: dict, split: str, frame_rate: float = 10.0, limit: int | None = None) -> list[MotionSequence]:
    if split not in manifest["splits"]:
        raise ValueError(f"manifest has no split {split!r}")
    files = manifest["splits"][split][:limit]
    root = Path(manifest["root"])
    return [read_sequence(root / name, frame_rate) for name in files]
