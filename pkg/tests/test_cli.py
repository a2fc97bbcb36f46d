import csv
import io as _io
import json

import numpy as np
import pytest
import yaml

from streamdiff import io
from streamdiff.cli import main
from streamdiff.config import ConfigError, resolve
from streamdiff.synthgen import SynthConfig, extract_observations, generate_sequence, sequence_rng

SMALL = {
    "synth": {"n_frames": 40},
    "dataset": {"n_train": 4, "n_test": 2},
    "train": {"h": 2, "f": 3, "steps": 3, "batch_size": 4, "width": 16, "n_blocks": 1, "heads": 2, "log_every": 1},
    "engine": {"h": 2, "f": 3},
    "eval": {"n_sequences": 2},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--manifest", str(root / "data" / "manifest.json"),
                 "--out", str(root / "run")]) == 0
    return root, cfg


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_synth_is_byte_identical(workspace, tmp_path):
    root, cfg = workspace
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    a, b = _files(root / "data"), _files(tmp_path / "again")
    assert a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    manifest = json.loads((root / "data" / "manifest.json").read_text())
    assert len(manifest["splits"]["train"]) == 4 and len(manifest["splits"]["test"]) == 2
    assert (root / "data" / "config.resolved.yaml").exists() and (root / "data" / "config.hash").exists()


def test_seed_flag_changes_dataset(workspace, tmp_path):
    root, cfg = workspace
    assert main(["synth", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "s5")]) == 0
    assert (tmp_path / "s5" / "train" / "seq_00000.jsonl").read_bytes() != \
        (root / "data" / "train" / "seq_00000.jsonl").read_bytes()


def test_train_outputs(workspace):
    root, _ = workspace
    rows = list(csv.reader(open(root / "run" / "train_log.csv")))
    assert rows[0] == ["step", "loss", "wallclock"] and len(rows) == 4
    assert (root / "run" / "model.ckpt").stat().st_size > 0


def _sequence_file(path, n=200):
    cfg = SynthConfig(n_frames=n)
    rng = sequence_rng(3, 0)
    seq = extract_observations(generate_sequence(cfg, rng), cfg, rng)
    io.write_sequence(seq, path)
    return seq


def test_stream_sequence_file(workspace, tmp_path):
    root, cfg = workspace
    _sequence_file(tmp_path / "seq.jsonl")
    out = tmp_path / "stream"
    assert main(["stream", "--config", str(cfg), "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--input", str(tmp_path / "seq.jsonl"), "--out", str(out)]) == 0
    lines = (out / "emitted.jsonl").read_text().splitlines()
    assert len(lines) == 200
    assert [json.loads(l)["t"] for l in lines] == list(range(200))
    timing = list(csv.reader(open(out / "timing.csv")))
    assert timing[0] == ["t", "evals", "seconds"] and len(timing) == 201
    assert all(r[1] == "1" for r in timing[2:])


def test_stream_stdin_matches_file(workspace, tmp_path, monkeypatch):
    root, cfg = workspace
    _sequence_file(tmp_path / "seq.jsonl", n=30)
    ckpt = str(root / "run" / "model.ckpt")
    assert main(["stream", "--config", str(cfg), "--checkpoint", ckpt, "--input", str(tmp_path / "seq.jsonl"),
                 "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setattr("sys.stdin", _io.StringIO((tmp_path / "seq.jsonl").read_text()))
    assert main(["stream", "--config", str(cfg), "--checkpoint", ckpt, "--input", "-", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "emitted.jsonl").read_bytes() == (tmp_path / "b" / "emitted.jsonl").read_bytes()


def test_compare_table(workspace, tmp_path):
    root, cfg = workspace
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(cfg), "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--manifest", str(root / "data" / "manifest.json"), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "report.csv")))
    assert rows[0] == ["mode", "mpjpe", "head_pe", "wrist_pe", "pj", "auj", "evals_per_frame", "tick_seconds"]
    assert [r[0] for r in rows[1:]] == ["online", "online_no_stab", "offline_fullwindow", "resample_baseline"]
    for r in rows[1:]:
        assert all(np.isfinite(float(v)) and float(v) >= 0 for v in r[1:])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["online"]["meta"]["config_hash"]
    assert {p.name for p in (out / "plots").iterdir()} >= {"mpjpe_per_sequence.svg", "error_trace.svg", "jerk_trace.svg"}


def test_eval_single_mode(workspace, tmp_path):
    root, cfg = workspace
    out = tmp_path / "ev"
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--manifest", str(root / "data" / "manifest.json"), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "report.csv")))
    assert [r[0] for r in rows[1:]] == ["online"]


def test_unknown_keys_reported_together(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"synth": {"n_frame": 3}, "train": {"stepz": 1}, "extra": {}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0 and err.startswith("error: config:")
    for key in ("synth.n_frame", "train.stepz", "'extra'"):
        assert key in err


def test_engine_train_mismatch_rejected():
    with pytest.raises(ConfigError, match="engine.h must equal train.h"):
        resolve({"engine": {"h": 3}})


def test_invalid_horizon_in_config():
    with pytest.raises(ConfigError, match="invalid horizon"):
        resolve({"train": {"f": 6}, "engine": {"f": 6}})


def test_missing_checkpoint_single_line_error(workspace, tmp_path, capsys):
    _, cfg = workspace
    code = main(["stream", "--config", str(cfg), "--checkpoint", str(tmp_path / "nope.ckpt"),
                 "--input", "x", "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err.strip()
    assert code != 0 and err.count("\n") == 0 and "nope.ckpt" in err


def test_missing_manifest(workspace, tmp_path, capsys):
    root, cfg = workspace
    code = main(["compare", "--config", str(cfg), "--checkpoint", str(root / "run" / "model.ckpt"),
                 "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err.strip()
    assert code != 0 and "none.json" in err
