"""Acceptance gate: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v``; the lines appear in the
"acceptance criteria" section of the terminal summary (and inline with -s).
"""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import (
    ACCEPTANCE_LINES,
    bandlimited_noise,
    dominant_frequency,
    gradient_check,
    line_trajectory,
    xcorr_lag,
)
from doppler_binaural.ablation import ALL_VARIANTS, run_ablation
from doppler_binaural.audio import AudioBuffer, write_wav
from doppler_binaural.conditioning import build_condition
from doppler_binaural.geometry import (
    EarSide,
    Pose,
    Quaternion,
    Trajectory,
    ear_position,
    estimate_velocities,
    radial_velocity,
)
from doppler_binaural.metrics import evaluate_pair, phase_l2
from doppler_binaural.neural import forward, init_params
from doppler_binaural.render import (
    REFERENCE_CONFIG,
    RenderConfig,
    apply_warpfield,
    geometric_warpfield,
    render_geometric,
)
from doppler_binaural.scene import ablation_specs, build_dataset
from doppler_binaural.training import TrainingConfig

SR = 48000


def report(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_radial_velocity_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        amp, omega, phase = rng.uniform(0.5, 3, (3, 3)), rng.uniform(0.2, 2, (3, 3)), rng.uniform(0, 2 * np.pi, (3, 3))
        centre = rng.normal(size=3)
        centre *= rng.uniform(6, 12) / np.linalg.norm(centre)
        ear = ear_position(Pose(0.0, rng.normal(size=3) * 0.5, Quaternion.normalized(*rng.normal(size=4))), EarSide.LEFT)

        def rel(t):
            t = np.asarray(t, float)[..., None, None]
            return centre + np.sum(amp * np.sin(omega * t + phase), axis=-1) - ear

        t = np.arange(241) / 120.0
        p = rel(t)
        vr = radial_velocity(p, estimate_velocities(p, 120.0, smooth=False))
        h = 1e-6
        numeric = (np.linalg.norm(rel(t + h), axis=1) - np.linalg.norm(rel(t - h), axis=1)) / (2 * h)
        worst = max(worst, float(np.sqrt(np.mean((vr[1:-1] - numeric[1:-1]) ** 2))))
    elapsed = time.perf_counter() - start
    report(1, worst < 1e-3 and elapsed < 10,
           f"worst RMS |v_r - d|p|/dt| over 100 trajectories = {worst:.2e} m/s (< 1e-3), {elapsed:.2f} s (< 10 s)")


def test_2_doppler_reproduction():
    start = time.perf_counter()
    src = line_trajectory([30, 0, 0], [-20, 0, 0], duration=3.0)
    lis = Trajectory.stationary(src.times)
    mono = AudioBuffer(0.5 * np.sin(2 * np.pi * 1000 * np.arange(3 * SR) / SR))
    results = {}
    for name, cfg in (("geometric", RenderConfig()), ("emission-time", REFERENCE_CONFIG)):
        left = render_geometric(mono, src, lis, cfg).samples[0]
        results[name] = (dominant_frequency(left[SR // 10 : SR]), dominant_frequency(left[2 * SR : 3 * SR - 1]))
    elapsed = time.perf_counter() - start
    ok = elapsed < 30 and all(
        abs(a / 1061.92 - 1) < 0.01 and abs(r / 944.90 - 1) < 0.01 for a, r in results.values()
    )
    detail = ", ".join(f"{k} {a:.2f}/{r:.2f} Hz" for k, (a, r) in results.items())
    report(2, ok, f"approach/recede peaks {detail} vs 1061.92/944.90 Hz (1%), {elapsed:.2f} s (< 30 s)")


def test_3_itd_accuracy():
    start = time.perf_counter()
    src = line_trajectory([0, 2, 0], [0, 0, 0], duration=0.5)
    lis = Trajectory.stationary(src.times)
    mono = AudioBuffer(bandlimited_noise(SR // 2))
    expected = 0.18 * SR / 343.0
    lin = render_geometric(mono, src, lis, RenderConfig(interp="linear")).samples
    sinc = render_geometric(mono, src, lis, RenderConfig(interp="sinc8")).samples
    lag_lin = xcorr_lag(lin[0], lin[1])
    lag_sinc = xcorr_lag(sinc[0][2000:], sinc[1][2000:], parabolic=True)
    elapsed = time.perf_counter() - start
    ok = abs(lag_lin - 25) <= 1 and abs(lag_sinc - expected) <= 0.25 and elapsed < 10
    report(3, ok, f"linear lag {lag_lin:.0f} (25 +/- 1), sinc8 lag {lag_sinc:.3f} ({expected:.3f} +/- 0.25), "
                  f"{elapsed:.2f} s (< 10 s)")


def test_4_metric_sanity(small_scene, tmp_path):
    write_wav(small_scene.reference_binaural, tmp_path / "ref.wav")
    rep = evaluate_pair(tmp_path / "ref.wav", tmp_path / "ref.wav")
    values = (rep.wave_l2, rep.amplitude_l2, rep.phase_l2, rep.mrstft)
    tone = 0.5 * np.sin(2 * np.pi * 1000 * np.arange(SR) / SR)
    flipped = phase_l2(tone, -tone)
    ok = values == (0, 0, 0, 0) and abs(flipped - np.pi**2) < 1e-6
    report(4, ok, f"self-comparison {values}, sign-flip phase L2 - pi^2 = {flipped - np.pi**2:.1e}")


def test_5_gradient_correctness():
    start = time.perf_counter()
    errors, values = gradient_check(n_coords=24, seed=0)
    elapsed = time.perf_counter() - start
    nonzero = int(np.count_nonzero(values))
    ok = np.max(errors) < 1e-4 and nonzero >= 20 and elapsed < 60
    report(5, ok, f"max relative error {np.max(errors):.2e} (< 1e-4) on 24 coordinates ({nonzero} non-zero), "
                  f"{elapsed:.2f} s (< 60 s)")


def test_6_zero_init_identity(small_scene):
    cond = build_condition(small_scene, "spherical")
    n = len(small_scene.mono)
    warps = [geometric_warpfield(n, small_scene.source_traj, small_scene.listener_traj, s) for s in EarSide]
    out, _ = forward(small_scene.mono.mono, cond, warps, init_params(cond.channels, seed=1))
    geo = np.stack([apply_warpfield(small_scene.mono, w) for w in warps])
    diff = float(np.max(np.abs(out - geo)))
    report(6, diff < 1e-6, f"max |model - geometric warp| = {diff:.1e} (< 1e-6)")


def _ablation(tmp_path_factory):
    """12 scenes (8 train / 2 validation / 2 test), 5 variants x 3 seeds, 2000 steps each."""
    start = time.perf_counter()
    data = tmp_path_factory.mktemp("ablation_data")
    build_dataset(ablation_specs(), data)
    result = run_ablation(data / "manifest.json", ALL_VARIANTS, (1, 2, 3), TrainingConfig(steps=2000),
                          out_dir=tmp_path_factory.mktemp("ablation_out"))
    return SimpleNamespace(result=result, seconds=time.perf_counter() - start)


@pytest.fixture(scope="session")
def ablation_run(tmp_path_factory):
    return _ablation(tmp_path_factory)


def test_7_ablation_ordering(ablation_run):
    r = ablation_run.result
    med = r.medians
    failed = [f"{c.variant}/{c.seed}" for c in r.failed]
    sph, zer, car = (med[v]["phase_l2"] for v in ("spherical", "zeros", "cartesian"))
    waves = {v: m["wave_l2"] for v, m in med.items()}
    base = r.baseline["wave_l2"]
    ok = (not failed and sph < zer and sph <= car and all(w < base for w in waves.values())
          and ablation_run.seconds < 1800)
    wave_text = ", ".join(f"{v} {w * 1e3:.2f}" for v, w in waves.items())
    report(7, ok, f"median phase L2 spherical {sph:.4f} < zeros {zer:.4f}, <= cartesian {car:.4f}; "
                  f"median wave L2 x1e3 [{wave_text}] < untrained {base * 1e3:.2f}; "
                  f"failed cells {failed or 'none'}; {ablation_run.seconds / 60:.1f} min (< 30 min)")


def test_8_determinism(ablation_run, tmp_path_factory):
    again = _ablation(tmp_path_factory)
    first, second = ablation_run.result.to_dict(), again.result.to_dict()
    mismatched = [
        f"{a['variant']}/{a['seed']}" for a, b in zip(first["cells"], second["cells"]) if a != b
    ]
    ok = first == second
    report(8, ok, f"repeat of the 15-cell sweep is bit-identical: {'yes' if ok else 'no, differing ' + str(mismatched)}")
