"""Command-line entry point: ``streamdiff {synth,train,stream,eval,compare}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import io
from .config import Config, ConfigError, load_config, write_resolved
from .denoiser import CheckpointError, NetworkDenoiser, load_checkpoint, save_checkpoint
from .metrics import REPORT_COLUMNS, compare_modes, jerk_trace, svg_line_plot
from .online import EngineConfig, run_stream
from .synthgen import extract_observations, generate_sequence, sequence_rng
from .training import train

logger = logging.getLogger("streamdiff")


class CommandError(RuntimeError):
    pass


def _config(args, extra: dict | None = None) -> Config:
    overrides = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides.update({"synth.seed": args.seed, "train.seed": args.seed})
    return load_config(args.config, overrides)


def _out_dir(args) -> Path:
    if not args.out:
        raise CommandError("usage: --out DIR is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def command_synth(args) -> Path:
    cfg = _config(args)
    out = _out_dir(args)
    write_resolved(cfg, out)
    splits = {}
    # test sequences use a disjoint index range of the same splittable seed
    for split, count, offset in (("train", cfg.dataset.n_train, 0), ("test", cfg.dataset.n_test, 1_000_000)):
        files = []
        for i in range(count):
            rng = sequence_rng(cfg.synth.seed, offset + i)
            seq = extract_observations(generate_sequence(cfg.synth, rng), cfg.synth, rng)
            name = f"{split}/seq_{i:05d}.jsonl"
            io.write_sequence(seq, out / name)
            files.append(name)
        splits[split] = files
    path = io.write_manifest(out / "manifest.json", splits, cfg.synth.to_dict(), cfg.hash())
    print(path)
    return path


def _manifest(args) -> dict:
    if not args.manifest:
        raise CommandError("usage: --manifest PATH is required")
    try:
        return io.read_manifest(args.manifest)
    except FileNotFoundError as exc:
        raise CommandError(str(exc)) from exc


def command_train(args) -> Path:
    cfg = _config(args)
    manifest = _manifest(args)
    out = _out_dir(args)
    write_resolved(cfg, out)
    sequences = io.load_split(manifest, "train", cfg.synth.frame_rate)
    torch.set_num_threads(1)
    result = train(sequences, cfg.synth, cfg.train, log_path=out / "train_log.csv", progress=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    save_checkpoint(result.model, result.schedule, ckpt, {**cfg.train.to_dict(), "config_hash": cfg.hash()})
    print(ckpt)
    return ckpt


def _load(path):
    if not path:
        raise CommandError("usage: --checkpoint PATH is required")
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CommandError(f"cannot read checkpoint {path}") from exc


def _engine(args, cfg: Config, model) -> EngineConfig:
    eng = cfg.engine
    flags = {
        "h": getattr(args, "h", None),
        "f": getattr(args, "f", None),
        "K": getattr(args, "K", None),
        "refine_passes": getattr(args, "dk_passes", None),
        "stab_n": getattr(args, "stab_n", None),
    }
    eng = replace(eng, **{k: v for k, v in flags.items() if v is not None})
    if (eng.h, eng.f) != (model.config.h, model.config.f):
        raise CommandError(f"engine window (h={eng.h}, f={eng.f}) does not match checkpoint "
                           f"(h={model.config.h}, f={model.config.f})")
    return eng


def command_stream(args) -> Path:
    cfg = _config(args)
    model, sched = _load(args.checkpoint)
    eng = _engine(args, cfg, model)
    if eng.K != sched.K:
        raise CommandError(f"engine K={eng.K} does not match checkpoint K={sched.K}")
    out = _out_dir(args)
    write_resolved(cfg, out)
    torch.set_num_threads(1)
    denoiser = NetworkDenoiser(model)
    src = sys.stdin if args.input in (None, "-") else open(args.input)
    seed = args.seed if args.seed is not None else cfg.train.seed
    try:
        with open(out / "emitted.jsonl", "w") as fh:

            def emit(t, pose):
                # flushed per frame so the output tracks a live stream
                fh.write(io.dumps({"t": t, "pose_world": [float(v) for v in pose]}) + "\n")
                fh.flush()

            result = run_stream(denoiser, sched, eng, io.iter_observations(src), seed=seed, on_frame=emit, keep=False)
    finally:
        if src is not sys.stdin:
            src.close()
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "evals", "seconds"])
        for row in result.timing:
            w.writerow([row["t"], row["evals"], f"{row['seconds']:.6f}"])
    print(out / "emitted.jsonl")
    return out


def _write_reports(reports, out: Path, plots: bool):
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for rep in reports.values():
            agg = rep.aggregate()
            w.writerow([agg[c] if c == "mode" else repr(agg[c]) for c in REPORT_COLUMNS])
    with open(out / "sequences.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "index", "mpjpe", "head_pe", "wrist_pe", "pj", "auj", "evals_per_frame", "tick_seconds"])
        for rep in reports.values():
            for s in rep.sequences:
                row = asdict(s)
                w.writerow([rep.mode] + [row[k] for k in ("index", "mpjpe", "head_pe", "wrist_pe", "pj", "auj",
                                                            "evals_per_frame", "tick_seconds")])
    summary = {mode: rep.to_dict() for mode, rep in reports.items()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plots:
        series = {m: [s.mpjpe for s in rep.sequences] for m, rep in reports.items()}
        (out / "plots").mkdir(exist_ok=True)
        (out / "plots" / "mpjpe_per_sequence.svg").write_text(svg_line_plot(series, "MPJPE per test sequence (m)"))


def _evaluate(args, modes):
    cfg = _config(args)
    model, sched = _load(args.checkpoint)
    eng = _engine(args, cfg, model)
    manifest = _manifest(args)
    out = _out_dir(args)
    write_resolved(cfg, out)
    torch.set_num_threads(1)
    sequences = io.load_split(manifest, "test", cfg.synth.frame_rate, limit=cfg.eval.n_sequences)
    offline = None
    if getattr(args, "offline_checkpoint", None):
        offline = NetworkDenoiser(_load(args.offline_checkpoint)[0])
    seed = args.seed if args.seed is not None else cfg.train.seed
    meta = {"config_hash": cfg.hash(), "checkpoint": str(args.checkpoint)}
    reports = compare_modes(
        NetworkDenoiser(model), sched, eng, sequences, modes=modes, offline_denoiser=offline,
        noise_level=cfg.eval.noise_level, seed=seed, meta=meta,
    )
    _write_reports(reports, out, cfg.eval.plots)
    if cfg.eval.plots and "online" in modes and sequences:
        from .online import run_stream as _run

        res = _run(NetworkDenoiser(model), sched, eng, sequences[0].observations(), seed=seed)
        err = np.linalg.norm((res.poses - sequences[0].poses_world).reshape(len(res.poses), -1, 3), axis=-1).mean(1)
        (out / "plots" / "error_trace.svg").write_text(svg_line_plot({"online": err}, "per-frame error, sequence 0 (m)"))
        (out / "plots" / "jerk_trace.svg").write_text(
            svg_line_plot({"online": jerk_trace(res.poses, sequences[0].frame_rate),
                           "ground truth": jerk_trace(sequences[0].poses_world, sequences[0].frame_rate)},
                          "mean jerk magnitude, sequence 0 (m/s^3)"))
    print(out / "report.csv")
    return out


def command_eval(args) -> Path:
    return _evaluate(args, ("online",))


def command_compare(args) -> Path:
    cfg = _config(args)
    modes = tuple(args.modes.split(",")) if args.modes else tuple(cfg.eval.modes)
    return _evaluate(args, modes)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (unknown keys are errors)")
    common.add_argument("--seed", type=int, help="override synth/train/stream seed")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="streamdiff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")

    p = sub.add_parser("train", parents=[common], help="train a denoiser")
    p.add_argument("--manifest", help="dataset manifest from `synth`")
    p.add_argument("--checkpoint", help="checkpoint output path (default OUT/model.ckpt)")

    engine_flags = argparse.ArgumentParser(add_help=False)
    engine_flags.add_argument("--checkpoint", help="trained checkpoint")
    engine_flags.add_argument("--h", type=int)
    engine_flags.add_argument("--f", type=int)
    engine_flags.add_argument("--K", type=int)
    engine_flags.add_argument("--dk-passes", dest="dk_passes", type=int, help="denoiser passes per tick")
    engine_flags.add_argument("--stab-n", dest="stab_n", type=int, help="stabilization noise level")

    p = sub.add_parser("stream", parents=[common, engine_flags], help="stream observations through the engine")
    p.add_argument("--input", help="JSONL observations or sequence file; '-' or omitted reads stdin")

    for name in ("eval", "compare"):
        p = sub.add_parser(name, parents=[common, engine_flags], help=f"{name} a checkpoint on the test split")
        p.add_argument("--manifest", help="dataset manifest from `synth`")
        p.add_argument("--offline-checkpoint", dest="offline_checkpoint",
                       help="checkpoint trained with train.mask_mode=offline")
        if name == "compare":
            p.add_argument("--modes", help="comma-separated subset of modes")
    return parser


COMMANDS = {
    "synth": command_synth,
    "train": command_train,
    "stream": command_stream,
    "eval": command_eval,
    "compare": command_compare,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return 2
    except CommandError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
