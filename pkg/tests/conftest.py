import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from doppler_binaural.geometry import Trajectory
from doppler_binaural.scene import SceneSpec, generate_scene


def rotation_matrix(q):
    """Independent rotation oracle: scipy uses the same (x, y, z, w) layout."""
    return Rotation.from_quat(q).as_matrix()


def line_trajectory(start, velocity, duration=1.0, rate=120.0, t0=0.0):
    times = t0 + np.arange(int(round(duration * rate)) + 1) / rate
    pos = np.asarray(start, float) + np.outer(times - t0, velocity)
    return Trajectory(rate, times, pos, np.tile([0.0, 0.0, 0.0, 1.0], (len(times), 1)))


@pytest.fixture(scope="session")
def small_scene():
    spec = SceneSpec(kind="passby", duration=0.5, speed=15.0, radius=2.0, tone=180.0, seed=4, attenuation_ref=4.0)
    return generate_scene(spec)


def dominant_frequency(x, sr=48000, pad=16):
    """Peak of a Hann-windowed, zero-padded spectrum with parabolic refinement."""
    n = pad * len(x)
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x)), n=n))
    k = int(np.argmax(mag[1:-1])) + 1
    a, b, c = np.log(mag[k - 1 : k + 2])
    k = k + 0.5 * (a - c) / (a - 2 * b + c)
    return k * sr / n


def xcorr_lag(left, right, parabolic=False):
    """Lag (samples) by which ``right`` trails ``left``."""
    n = len(left) + len(right)
    cc = np.fft.irfft(np.conj(np.fft.rfft(left, n)) * np.fft.rfft(right, n), n)
    cc = np.concatenate([cc[-len(left) + 1 :], cc[: len(right)]])
    lags = np.arange(-len(left) + 1, len(right))
    k = int(np.argmax(cc))
    if not parabolic:
        return float(lags[k])
    a, b, c = cc[k - 1 : k + 2]
    return lags[k] + 0.5 * (a - c) / (a - 2 * b + c)


def bandlimited_noise(n, cutoff=6000.0, sr=48000, seed=0):
    from scipy.signal import butter, sosfiltfilt

    x = np.random.default_rng(seed).normal(size=n)
    y = sosfiltfilt(butter(8, cutoff, fs=sr, output="sos"), x)
    return 0.5 * y / np.max(np.abs(y))


def gradient_check(n_coords=32, seed=0, h=1e-4, warmup=1000):
    """Analytic vs central-difference gradient on random coordinates of a
    model with a random (non-zero) output layer.

    Returns ``(relative_errors, analytic_values)``; coordinates whose two
    estimates are both exactly zero count as matching.
    """
    from doppler_binaural.conditioning import ConditionStats, build_condition
    from doppler_binaural.neural import backward, flatten_grads, forward, init_params, loss_and_grad
    from doppler_binaural.training import make_example

    scene = generate_scene(SceneSpec("passby", duration=0.3, speed=20, radius=2, tone=120, seed=5, attenuation_ref=4))
    stats = ConditionStats.from_tracks([build_condition(scene, "spherical")])
    ex = make_example(scene, "spherical", stats)
    rng = np.random.default_rng(seed)
    params = init_params(ex.condition.channels, seed=3)
    theta = params.to_vector()
    head = 4 * params.hidden + 4
    theta[-head:] = rng.normal(0, 0.05, head)
    params = params.with_vector(theta)

    def objective(p):
        out, cache = forward(ex.mono, ex.condition, ex.geo, p)
        value, grad_out = loss_and_grad(out, ex.target, warmup)
        return value, grad_out, cache

    _, grad_out, cache = objective(params)
    analytic = flatten_grads(backward(cache, params, grad_out))
    errors, values = [], []
    for i in rng.choice(params.size, n_coords, replace=False):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        numeric = (objective(params.with_vector(up))[0] - objective(params.with_vector(down))[0]) / (2 * h)
        scale = max(abs(analytic[i]), abs(numeric))
        errors.append(0.0 if scale == 0 else abs(analytic[i] - numeric) / scale)
        values.append(analytic[i])
    return np.array(errors), np.array(values)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
