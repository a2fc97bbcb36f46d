"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The desk-scale criteria (5, 6, 7) need three trained default-size models.
They are trained once and cached under ``.acceptance_cache/`` (override
with ``STREAMDIFF_ACCEPTANCE_CACHE``) keyed by a hash of the training
configuration, so reruns only pay for evaluation.
"""
import json
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from streamdiff.core import ControlSignal, HeadPose, canonicalize
from streamdiff.denoiser import DenoiserModel, ModelConfig, NetworkDenoiser, load_checkpoint, save_checkpoint
from streamdiff.diffusion import forward_corrupt, inject_noise, make_schedule, reverse_jump
from streamdiff.metrics import causality_probe, compare_modes, config_hash, jerk_metrics, mpjpe, rms_motion_amplitude
from streamdiff.online import EngineConfig, future_noise_schedule, init_stream, run_stream, tick
from streamdiff.oracle import CountingDenoiser, OracleDenoiser
from streamdiff.synthgen import SynthConfig, extract_observations, generate_dataset, generate_sequence, sequence_rng
from streamdiff.training import NoiseRobustConfig, TrainConfig, causal_inject, noise_robust_inject, train, training_loss

CACHE = Path(os.environ.get("STREAMDIFF_ACCEPTANCE_CACHE", Path(__file__).resolve().parent.parent / ".acceptance_cache"))
SYNTH = SynthConfig()
N_TRAIN, N_TEST, TEST_OFFSET = 2000, 20, 1_000_000


def report(n, ok, detail, capsys):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------- models


def _trained(name, **overrides):
    cfg = TrainConfig(**overrides)
    key = config_hash({"train": cfg.to_dict(), "synth": SYNTH.to_dict(), "n_train": N_TRAIN})
    ckpt, losses_path = CACHE / f"{name}-{key}.ckpt", CACHE / f"{name}-{key}.losses.npy"
    if not (ckpt.exists() and losses_path.exists()):
        torch.set_num_threads(1)
        result = train(generate_dataset(SYNTH, N_TRAIN), SYNTH, cfg)
        save_checkpoint(result.model, result.schedule, ckpt, cfg.to_dict())
        np.save(losses_path, result.losses)
    model, sched = load_checkpoint(ckpt)
    return NetworkDenoiser(model), sched, np.load(losses_path)


@pytest.fixture(scope="module")
def clean_model():
    return _trained("clean")


@pytest.fixture(scope="module")
def robust_model():
    return _trained("robust", noise_robust=NoiseRobustConfig(enabled=True))


@pytest.fixture(scope="module")
def offline_model():
    return _trained("offline", mask_mode="offline")


@pytest.fixture(scope="module")
def test_set():
    return generate_dataset(SYNTH, N_TEST, offset=TEST_OFFSET)


def _small_model(seed=0):
    cfg = ModelConfig(dim=21, h=5, f=19, width=16, n_blocks=1, heads=2)
    return NetworkDenoiser(DenoiserModel(cfg, seed=seed))


def _random_observation(rng):
    vl, vr = rng.integers(0, 2, size=2)
    return ControlSignal(
        HeadPose(rng.normal(size=3), rng.uniform(-np.pi, np.pi)),
        rng.normal(size=3) if vl else None,
        rng.normal(size=3) if vr else None,
        vl,
        vr,
    )


# ---------------------------------------------------------------- criteria


def test_criterion_1_schedule_exactness(capsys):
    start = time.perf_counter()
    exact = list(future_noise_schedule(19, 100)) == list(range(0, 100, 5))
    cfg = EngineConfig()
    sched = make_schedule(cfg.K)
    den = _small_model()
    rng = np.random.default_rng(1)
    _, state = init_stream(den, sched, cfg, _random_observation(rng), seed=1)
    canonical = cfg.canonical_levels()
    held = np.array_equal(state.window.levels, canonical)
    for _ in range(1000):
        _, state = tick(state, _random_observation(rng), den, sched)
        held &= np.array_equal(state.window.levels, canonical)
    elapsed = time.perf_counter() - start
    report(1, exact and held and elapsed < 60,
           f"schedule {'exact' if exact else 'WRONG'}; invariant held over 1000 ticks: {held}; {elapsed:.1f}s", capsys)


def test_criterion_2_strict_causality(capsys):
    sched = make_schedule(100)
    cfg = EngineConfig()
    den = _small_model(seed=2)
    rng = np.random.default_rng(2)
    synth = SynthConfig(n_frames=40)
    failures, start = [], time.perf_counter()

    def perturbation(kind, r):
        def apply(t, o):
            if kind == "head":
                return ControlSignal(HeadPose(o.head.position + r.normal(0, 0.1, 3), o.head.yaw + 0.2),
                                     o.wrist_left, o.wrist_right, o.vis_left, o.vis_right)
            if kind == "visibility":
                vl, vr = 1 - o.vis_left, 1 - o.vis_right
                return ControlSignal(o.head, o.wrist_left if o.vis_left else r.normal(size=3) if vl else None,
                                     o.wrist_right if o.vis_right else r.normal(size=3) if vr else None,
                                     vl, vr)
            return ControlSignal(o.head, r.normal(size=3), r.normal(size=3), 1, 1)
        return apply

    for trial in range(50):
        i = int(rng.integers(10_000))
        srng = sequence_rng(99, i)
        seq = extract_observations(generate_sequence(synth, srng), synth, srng)
        t_star = int(rng.integers(0, len(seq) - 1))
        kind = ("head", "visibility", "wrists")[trial % 3]
        seed = int(rng.integers(1 << 31))
        res = causality_probe(lambda obs: run_stream(den, sched, cfg, obs, seed=seed).poses,
                              seq.observations(), t_star, perturbation(kind, np.random.default_rng(trial)))
        if not res.passed:
            failures.append((i, t_star, kind, res.first_divergent))
    report(2, not failures, f"{50 - len(failures)}/50 probes bit-identical before t*; "
           f"{time.perf_counter() - start:.1f}s", capsys)


def test_criterion_3_injection_anchoring(capsys):
    rng = np.random.default_rng(3)
    bad = 0
    for call in range(10_000):
        n, d = int(rng.integers(1, 8)), int(rng.integers(1, 30))
        anchor, x_k = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        b = (rng.random((n, d)) < rng.random()).astype(float)
        if call % 2 == 0:
            out = causal_inject(anchor, x_k, b)
            admitted = np.ones(n, bool)
        else:
            k, k_star = rng.integers(0, 101, size=n), int(rng.integers(0, 101))
            out = noise_robust_inject(anchor, x_k, b, k, k_star)
            admitted = k >= k_star
        take = (b == 1) & admitted[:, None]
        ok = np.array_equal(out[take], anchor[take]) and np.array_equal(out[~take], x_k[~take])
        ok &= np.array_equal(out[b == 0], x_k[b == 0])
        bad += not ok
    report(3, bad == 0, f"{10_000 - bad}/10000 fuzzed injections bit-exact", capsys)


def test_criterion_4_oracle_round_trip(capsys):
    sched = make_schedule(100)
    worst, spread, start = 0.0, 0.0, time.perf_counter()
    for i in range(50):
        rng = sequence_rng(4, i)
        seq = extract_observations(generate_sequence(SYNTH, rng), SYNTH, rng)
        outs = []
        for n in (0, 1, 2):
            res = run_stream(OracleDenoiser(seq, 5, 19), sched, EngineConfig(stab_n=n), seq.observations(), seed=i)
            worst = max(worst, float(np.sqrt(np.mean((res.poses[6:] - seq.poses_world[6:]) ** 2))))
            outs.append(res.poses)
        spread = max(spread, float(np.abs(outs[1] - outs[0]).max()), float(np.abs(outs[2] - outs[0]).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and spread <= 1e-5 and elapsed < 120
    report(4, ok, f"worst RMS {worst:.2e} m over 50 sequences; max spread across n={{0,1,2}} {spread:.2e}; "
           f"{elapsed:.1f}s", capsys)


def test_criterion_5_desk_scale_training(clean_model, test_set, capsys):
    den, sched, losses = clean_model
    ratio = losses[-500:].mean() / losses[:500].mean()
    amp = rms_motion_amplitude([canonicalize(s.poses_world, s.head_pos, s.head_yaw) for s in test_set])
    rep = compare_modes(den, sched, EngineConfig(), test_set, modes=("online",))["online"].aggregate()
    ok = ratio < 0.25 and rep["mpjpe"] <= 0.15 * amp
    report(5, ok, f"loss ratio {ratio:.3f} (< 0.25); online MPJPE {rep['mpjpe']:.4f} m vs "
           f"15% of amplitude {0.15 * amp:.4f} m ({rep['mpjpe'] / amp:.1%})", capsys)


def test_criterion_6_orderings(clean_model, robust_model, offline_model, test_set, capsys):
    den, sched, _ = clean_model
    clean = compare_modes(den, sched, EngineConfig(), test_set,
                          modes=("online", "online_no_stab", "offline_fullwindow"), offline_denoiser=offline_model[0])
    m = {k: v.aggregate()["mpjpe"] for k, v in clean.items()}
    rden, rsched, _ = robust_model
    noisy_clean = compare_modes(den, sched, EngineConfig(), test_set, modes=("online",), noise_level=2.0)
    noisy_robust = compare_modes(rden, rsched, EngineConfig(noise_robust=True), test_set, modes=("online",),
                                 noise_level=2.0)
    c_noisy = noisy_clean["online"].aggregate()["mpjpe"]
    r_noisy = noisy_robust["online"].aggregate()["mpjpe"]
    a = m["offline_fullwindow"] <= m["online"]
    b = m["online"] <= m["online_no_stab"]
    c = r_noisy < c_noisy
    report(6, a and b and c,
           f"(a) offline {m['offline_fullwindow']:.4f} <= online {m['online']:.4f}: {a}; "
           f"(b) stab {m['online']:.5f} <= no-stab {m['online_no_stab']:.5f}: {b}; "
           f"(c) l=2 robust {r_noisy:.4f} < clean {c_noisy:.4f}: {c}", capsys)


def test_criterion_7_long_horizon_stability(clean_model, capsys):
    den, sched, _ = clean_model
    synth = replace(SYNTH, n_frames=1000)
    rng = sequence_rng(7, 0)
    seq = extract_observations(generate_sequence(synth, rng), synth, rng)
    start = time.perf_counter()
    poses = run_stream(den, sched, EngineConfig(), seq.observations(), seed=7).poses
    early, late = slice(50, 150), slice(900, 1000)
    auj_e, auj_l = jerk_metrics(poses[early], synth.frame_rate)[1], jerk_metrics(poses[late], synth.frame_rate)[1]
    err_e, err_l = mpjpe(poses[early], seq.poses_world[early]), mpjpe(poses[late], seq.poses_world[late])
    ok = auj_l <= 2 * auj_e and err_l <= 2 * err_e
    report(7, ok, f"AUJ late/early {auj_l / auj_e:.2f}; MPJPE late/early {err_l / err_e:.2f} (both <= 2); "
           f"{time.perf_counter() - start:.1f}s", capsys)


def test_criterion_8_compute_bound(capsys):
    torch.set_num_threads(1)
    cfg = EngineConfig()
    den = NetworkDenoiser(DenoiserModel(ModelConfig(), seed=8))
    sched = make_schedule(cfg.K)
    rng = sequence_rng(8, 0)
    synth = replace(SYNTH, n_frames=60)
    seq = extract_observations(generate_sequence(synth, rng), synth, rng)
    runs = {}
    for mode, c in (("online", cfg), ("resample", replace(cfg, resample=True))):
        counter = CountingDenoiser(den)
        res = run_stream(counter, sched, c, seq.observations(), seed=0)
        ticks = res.timing[1:]
        runs[mode] = (np.array([r["evals"] for r in ticks]), sum(r["seconds"] for r in ticks))
    counts_ok = np.all(runs["online"][0] == cfg.refine_passes) and np.all(runs["resample"][0] == cfg.f + 1)
    speed = runs["resample"][1] / runs["online"][1]
    report(8, counts_ok and speed >= 10,
           f"evals/frame online {runs['online'][0].mean():.0f}, resample {runs['resample'][0].mean():.0f}; "
           f"wallclock ratio {speed:.1f}x (>= 10x)", capsys)


def test_criterion_9_numerical_hygiene(capsys):
    # gradient check on the tiny configuration, in float64
    cfg = ModelConfig(dim=4, h=1, f=2, width=8, n_blocks=1, heads=2)
    model = DenoiserModel(cfg, seed=0).double().eval()
    r = np.random.default_rng(9)
    inputs, levels = r.normal(size=(3, 4, 8)), r.integers(0, 101, size=(3, 4))
    targets = r.normal(size=(3, 4, 4))
    model.zero_grad()
    training_loss(model, inputs, levels, targets).backward()
    rel = []
    with torch.no_grad():
        for p in model.parameters():
            flat, grad = p.view(-1), p.grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + 1e-4
                up = training_loss(model, inputs, levels, targets).item()
                flat[i] = orig - 1e-4
                down = training_loss(model, inputs, levels, targets).item()
                flat[i] = orig
                fd, g = (up - down) / 2e-4, grad[i].item()
                rel.append(abs(g - fd) / max(abs(g), abs(fd), 1e-10))
    grad_frac = float(np.mean(np.array(rel) <= 1e-3))

    # forward/reverse identities
    sched = make_schedule(100)
    x0, eps = r.normal(size=(50, 21)), r.normal(size=(50, 21))
    k = r.integers(1, 101, size=50)
    x_k = forward_corrupt(x0, k, eps, sched)
    ab = sched.alpha_bar[k][:, None]
    ident = max(
        float(np.abs(x_k - (np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps)).max()),
        float(np.abs(reverse_jump(x_k, x0, k, 0, sched) - x0).max()),
        float(np.abs(reverse_jump(x_k, x0, k, k // 2, sched) - forward_corrupt(x0, k // 2, eps, sched)).max()),
    )

    # Monte-Carlo variance of injected noise
    n, level = 200_000, 30
    samples = inject_noise(np.zeros((n, 1)), level, r.standard_normal((n, 1)), sched)[:, 0]
    var, expected = samples.var(ddof=1), 1 - sched.alpha_bar[level]
    sigma = expected * np.sqrt(2 / (n - 1))
    mc_ok = abs(var - expected) < 3 * sigma
    ok = grad_frac >= 0.95 and ident <= 1e-9 and mc_ok
    report(9, ok, f"gradient check {grad_frac:.1%} coords within 1e-3; identity error {ident:.1e}; "
           f"MC variance {var:.5f} vs {expected:.5f} ({abs(var - expected) / sigma:.1f} sigma)", capsys)
