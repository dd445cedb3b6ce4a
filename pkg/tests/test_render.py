import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bandlimited_noise, dominant_frequency, line_trajectory, xcorr_lag
from doppler_binaural.audio import AudioBuffer
from doppler_binaural.errors import CoverageError, SupersonicError, ValidationError
from doppler_binaural.geometry import EAR_DISTANCE, EarSide, Trajectory
from doppler_binaural.render import (
    REFERENCE_CONFIG,
    RenderConfig,
    Warpfield,
    apply_warpfield,
    doppler_frequency,
    ear_gain,
    geometric_warpfield,
    render_geometric,
)

SR = 48000
LEFT_EAR = np.array([0.0, EAR_DISTANCE / 2, 0.0])


def static_listener(traj):
    return Trajectory.stationary(traj.times, rate=traj.rate)


def tone(freq, seconds, amp=0.5):
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * np.arange(int(seconds * SR)) / SR))


class TestWarpfield:
    def test_static_delay_480(self):
        src = line_trajectory(LEFT_EAR + [0, 3.43, 0], [0, 0, 0])
        w = geometric_warpfield(SR, src, static_listener(src), EarSide.LEFT)
        n = np.arange(SR)
        np.testing.assert_allclose(w.positions[480:], n[480:] - 480, atol=1e-9)
        assert np.all(w.positions[:480] == 0)

    def test_source_at_the_ear(self):
        src = line_trajectory(LEFT_EAR + [1e-3, 0, 0], [0, 0, 0])
        w = geometric_warpfield(1000, src, static_listener(src), EarSide.LEFT)
        assert np.max(w.delay[1:]) < 0.2

    @pytest.mark.parametrize("speed", [5.0, 20.0, 30.0])
    def test_receding_slope(self, speed):
        src = line_trajectory(LEFT_EAR + [0, 2, 0], [0, speed, 0])
        w = geometric_warpfield(SR, src, static_listener(src), EarSide.LEFT)
        slope = np.diff(w.positions[2000:])
        np.testing.assert_allclose(slope, 1 - speed / 343.0, atol=1e-6)

    def test_coverage_gap(self):
        src = line_trajectory([2, 0, 0], [0, 0, 0], duration=0.5)
        with pytest.raises(CoverageError):
            geometric_warpfield(SR, src, static_listener(src), EarSide.LEFT)

    def test_rejects_future_reads(self):
        with pytest.raises(ValidationError):
            Warpfield(np.arange(10) + 0.5)

    @settings(max_examples=30, deadline=None)
    @given(
        st.tuples(*[st.floats(-20, 20)] * 3),
        st.tuples(*[st.floats(-40, 40)] * 3),
        st.sampled_from(["reception", "emission"]),
    )
    def test_causal_for_any_subsonic_motion(self, start, velocity, propagation):
        src = line_trajectory(np.array(start) + [25, 0, 0], velocity, duration=0.25)
        cfg = RenderConfig(propagation=propagation)
        for side in EarSide:
            rho = geometric_warpfield(12000, src, static_listener(src), side, cfg).positions
            assert np.all(rho <= np.arange(12000))
            assert np.all(np.diff(rho) >= -1e-9)


class TestApplyWarpfield:
    def test_identity_bit_exact(self):
        x = np.random.default_rng(0).normal(size=500)
        for interp in ("linear", "sinc8"):
            out = apply_warpfield(x, Warpfield(np.arange(500.0)), RenderConfig(interp=interp))
            np.testing.assert_array_equal(out, x)

    def test_integer_delay(self):
        x = np.random.default_rng(1).normal(size=500)
        out = apply_warpfield(x, Warpfield(np.arange(500.0) - 100))
        np.testing.assert_array_equal(out[100:], x[:400])
        assert np.all(out[:100] == 0)

    def test_half_sample_on_ramp(self):
        x = np.arange(200.0)
        out = apply_warpfield(x, Warpfield(np.arange(200.0) - 0.5))
        np.testing.assert_allclose(out[1:], np.arange(1, 200) - 0.5, atol=1e-12)

    def test_reads_before_start_are_silent(self):
        out = apply_warpfield(np.ones(10), Warpfield(np.full(10, -3.0)))
        assert np.all(out == 0)


class TestRenderGeometric:
    def test_median_plane_symmetry(self):
        src = line_trajectory([8, 0, 0.3], [-10, 0, 0], duration=0.5)
        out = render_geometric(tone(500, 0.5), src, static_listener(src), RenderConfig(head_shadow=False))
        np.testing.assert_allclose(out.samples[0], out.samples[1], atol=1e-6)

    def test_itd_linear(self):
        src = line_trajectory([0, 2, 0], [0, 0, 0], duration=0.5)
        out = render_geometric(AudioBuffer(bandlimited_noise(SR // 2)), src, static_listener(src))
        assert abs(xcorr_lag(out.samples[0], out.samples[1]) - 0.18 * SR / 343) <= 1.0

    def test_itd_sinc8_subsample(self):
        src = line_trajectory([0, 2, 0], [0, 0, 0], duration=0.5)
        cfg = RenderConfig(interp="sinc8")
        out = render_geometric(AudioBuffer(bandlimited_noise(SR // 2)), src, static_listener(src), cfg)
        lag = xcorr_lag(out.samples[0][2000:], out.samples[1][2000:], parabolic=True)
        assert lag == pytest.approx(0.18 * SR / 343, abs=0.25)

    def test_head_shadow_attenuates_far_ear(self):
        src = line_trajectory([0, 2, 0], [0, 0, 0], duration=0.2)
        g_near = ear_gain(100, src, static_listener(src), EarSide.LEFT)
        g_far = ear_gain(100, src, static_listener(src), EarSide.RIGHT)
        assert g_near[0] == pytest.approx(1 / 1.91, rel=1e-12)
        assert g_far[0] == pytest.approx(0.6 / 2.09, rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-25, 25), st.floats(-25, 25), st.floats(0.5, 8))
    def test_peak_bounded_by_max_gain(self, vx, vy, ref):
        src = line_trajectory([6, -3, 0.2], [vx, vy, 0], duration=0.2)
        x = tone(700, 0.2)
        cfg = RenderConfig(attenuation_ref=ref)
        out = render_geometric(x, src, static_listener(src), cfg)
        for k, side in enumerate(EarSide):
            g = ear_gain(len(x), src, static_listener(src), side, cfg)
            assert np.max(np.abs(out.samples[k])) <= np.max(np.abs(x.samples)) * np.max(g) + 1e-12


class TestDoppler:
    @pytest.mark.parametrize("v_r,expected", [(0, 1000.0), (-20, 1061.92), (20, 944.90)])
    def test_relation(self, v_r, expected):
        assert doppler_frequency(1000, v_r) == pytest.approx(expected, abs=0.005)

    def test_supersonic(self):
        with pytest.raises(SupersonicError):
            doppler_frequency(1000, -343)

    def test_head_on_fft_peak(self):
        src = line_trajectory([30, 0, 0], [-20, 0, 0], duration=3.0)
        out = render_geometric(tone(1000, 3.0), src, static_listener(src), REFERENCE_CONFIG)
        left = out.samples[0]
        approach, recede = left[SR // 10 : SR], left[2 * SR : 3 * SR - 1]
        assert dominant_frequency(approach) == pytest.approx(1061.92, rel=1e-3)
        assert dominant_frequency(recede) == pytest.approx(944.90, rel=1e-3)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-30, 30), st.floats(200, 4000), st.sampled_from(["reception", "emission"]))
    def test_constant_radial_velocity_matches_relation(self, v_r, f0, propagation):
        # moving along the line through the left ear keeps v_r exactly constant
        direction = np.array([0.0, 1.0, 0.0])
        start = LEFT_EAR + direction * (20 - 0.5 * v_r)
        src = line_trajectory(start, direction * v_r, duration=0.6)
        cfg = RenderConfig(propagation=propagation)
        out = render_geometric(tone(f0, 0.6), src, static_listener(src), cfg)
        measured = dominant_frequency(out.samples[0][6000:])
        assert measured == pytest.approx(doppler_frequency(f0, v_r), rel=0.01)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-150, 150))
    def test_emission_time_is_exact_at_high_speed(self, v_r):
        direction = np.array([0.0, 1.0, 0.0])
        src = line_trajectory(LEFT_EAR + direction * (60 - 0.5 * v_r), direction * v_r, duration=0.6)
        out = render_geometric(tone(500, 0.6), src, static_listener(src), RenderConfig(propagation="emission"))
        measured = dominant_frequency(out.samples[0][12000:])
        assert measured == pytest.approx(doppler_frequency(500, v_r), rel=1e-3)


def test_config_validation():
    with pytest.raises(ValidationError):
        RenderConfig(speed_of_sound=0)
    with pytest.raises(ValidationError):
        RenderConfig(attenuation_ref=-1)
    with pytest.raises(ValidationError):
        RenderConfig(interp="cubic")
