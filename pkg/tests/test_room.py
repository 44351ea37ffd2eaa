"""Tests for geometry sampling, image-method RIRs, and pair mixing.

Oracles: direct-path delay from geometry, the 1/(4 pi d) amplitude law on a
reflection-free response, naive O(n k) convolution, a synthetic
exponential-decay curve with known T60, and index arithmetic for mixing.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbsep.audio import MultichannelWaveform
from nbsep.room import (ARRAY_RADIUS, N_MICS, SPEED_OF_SOUND, MixtureScene,
                        RoomScenario, calibrated_reflection, estimate_t60,
                        eyring_absorption, first_arrival_sample, mix_pair,
                        sample_scenario, schroeder_decay, simulate_rir,
                        spatialize)

FS = 16000


def make_scenario(dims=(6.0, 6.0, 3.5), rt60=0.3, speaker=(4.765, 3.0, 1.5)):
    """Hand-built scenario: array centered in the room, mic 0 on +x."""
    dims = np.asarray(dims, dtype=np.float64)
    center = np.array([dims[0] / 2, dims[1] / 2, 1.5])
    angles = 2.0 * np.pi * np.arange(N_MICS) / N_MICS
    mics = center + ARRAY_RADIUS * np.stack(
        [np.cos(angles), np.sin(angles), np.zeros(N_MICS)], axis=1)
    speakers = np.atleast_2d(np.asarray(speaker, dtype=np.float64))
    return RoomScenario(room_dims=dims, rt60=rt60, mic_positions=mics,
                        speaker_positions=speakers, angular_difference=0.0)


class TestSampleScenario:

    def test_deterministic(self):
        a = sample_scenario(42)
        b = sample_scenario(42)
        assert np.array_equal(a.room_dims, b.room_dims)
        assert a.rt60 == b.rt60
        assert np.array_equal(a.mic_positions, b.mic_positions)
        assert np.array_equal(a.speaker_positions, b.speaker_positions)
        c = sample_scenario(43)
        assert not np.array_equal(a.speaker_positions, c.speaker_positions)

    def test_invariants_hold(self):
        for seed in range(50):
            scn = sample_scenario(seed)
            scn.validate()
            assert scn.n_speakers == 2
            assert 0.0 <= scn.angular_difference <= 180.0

    def test_rt60_statistics(self):
        draws = np.array([sample_scenario(s).rt60 for s in range(10_000)])
        assert draws.min() >= 0.1 and draws.max() <= 1.0
        assert abs(draws.mean() - 0.55) < 0.02

    def test_rt60_range_restriction(self):
        for seed in range(20):
            scn = sample_scenario(seed, rt60_range=(0.1, 0.3))
            assert 0.1 <= scn.rt60 <= 0.3
        with pytest.raises(ValueError, match="rt60 range"):
            sample_scenario(0, rt60_range=(0.01, 0.3))

    def test_speaker_count(self):
        assert sample_scenario(0, n_speakers=3).n_speakers == 3
        with pytest.raises(ValueError, match="at least one"):
            sample_scenario(0, n_speakers=0)


class TestSimulateRir:

    def test_direct_path_delay(self):
        # mic 0 sits at x-center + 0.05, speaker 1.715 m beyond it:
        # 1.715 / 343 * 16000 = 80 samples exactly.
        scn = make_scenario()
        rirs = simulate_rir(scn).rirs
        assert rirs.shape[0] == 1 and rirs.shape[1] == 8
        assert abs(first_arrival_sample(rirs[0, 0]) - 80) <= 1
        for m in range(8):
            d = np.linalg.norm(scn.speaker_positions[0] - scn.mic_positions[m])
            expected = int(round(d / SPEED_OF_SOUND * FS))
            assert abs(first_arrival_sample(rirs[0, m]) - expected) <= 1

    def test_direct_only_amplitude_law(self):
        # max_order=0 keeps just the direct path; with integer-sample
        # distances the tap value is exactly 1 / (4 pi d).
        d0, d1 = 1.715, 3.430  # 80 and 160 samples
        scn = make_scenario()
        scn.mic_positions[0] = scn.speaker_positions[0] + [d0, 0.0, 0.0]
        scn.mic_positions[1] = scn.speaker_positions[0] + [0.0, d1, 0.0]
        rirs = simulate_rir(scn, max_order=0).rirs
        a0 = rirs[0, 0, 80]
        a1 = rirs[0, 1, 160]
        assert abs(a0 - 1.0 / (4.0 * np.pi * d0)) < 1e-12
        assert abs(a0 / a1 - d1 / d0) < 1e-6
        assert np.abs(np.delete(rirs[0, 0], 80)).max() < 1e-15

    def test_near_anechoic_single_impulse(self):
        # a tiny decay time drives the reflection coefficient toward zero,
        # so almost all energy sits in the direct-path tap
        scn = make_scenario(dims=(3.0, 3.0, 3.0), rt60=0.015,
                            speaker=(1.0, 1.0, 1.5))
        rir = simulate_rir(scn).rirs[0, 0]
        onset = first_arrival_sample(rir)
        # the direct tap occupies the interpolation filter's +-41 samples
        window = slice(max(onset - 41, 0), onset + 42)
        direct = np.sum(rir[window] ** 2)
        total = np.sum(rir ** 2)
        assert direct / total > 0.99

    def test_t60_tracks_target(self):
        for seed, rt60 in ((0, 0.25), (1, 0.5)):
            scn = sample_scenario(seed, n_speakers=1,
                                  rt60_range=(rt60, rt60 + 1e-6))
            est = estimate_t60(simulate_rir(scn).rirs[0, 0], FS)
            assert abs(est - rt60) / rt60 < 0.25

    def test_deterministic(self):
        scn = make_scenario(rt60=0.2)
        a = simulate_rir(scn).rirs
        b = simulate_rir(scn).rirs
        assert np.array_equal(a, b)

    def test_unachievable_rt60(self):
        scn = make_scenario()
        scn.rt60 = 0.0
        with pytest.raises(ValueError, match="unachievable rt60"):
            simulate_rir(scn)


class TestDecayEstimation:

    def test_known_exponential_decay(self):
        # amplitude envelope 10^(-3 t / T) decays 60 dB in energy at t = T
        for t60 in (0.3, 0.6):
            t = np.arange(int(1.2 * t60 * FS)) / FS
            rir = 10.0 ** (-3.0 * t / t60)
            est = estimate_t60(rir, FS)
            assert abs(est - t60) / t60 < 0.01

    def test_schroeder_curve_shape(self):
        rng = np.random.default_rng(0)
        rir = rng.standard_normal(4000) * 10.0 ** (-3.0 * np.arange(4000) / 4000)
        curve = schroeder_decay(rir)
        assert curve[0] == 0.0
        assert np.all(np.diff(curve) <= 1e-12)

    def test_empty_rir_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            schroeder_decay(np.zeros(100))
        with pytest.raises(ValueError, match="empty"):
            first_arrival_sample(np.zeros(100))

    def test_too_short_decay_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            estimate_t60(np.ones(100), FS)

    def test_calibrated_reflection_range(self):
        dims = np.array([5.0, 4.0, 3.0])
        b_short = calibrated_reflection(dims, 0.2)
        b_long = calibrated_reflection(dims, 0.8)
        assert 0.0 < b_short < b_long < 1.0
        assert 0.0 < eyring_absorption(dims, 0.5) < 1.0


class TestSpatialize:

    def test_delta_reproduces_rir(self):
        rng = np.random.default_rng(1)
        rirs = rng.standard_normal((8, 64))
        dry = np.zeros(200)
        dry[0] = 1.0
        out = spatialize(MultichannelWaveform(dry[None, :], FS), rirs)
        assert out.data.shape == (8, 200 + 64 - 1)
        assert np.abs(out.data[:, :64] - rirs).max() < 1e-12
        assert np.abs(out.data[:, 64:]).max() < 1e-12

    def test_zeros(self):
        out = spatialize(MultichannelWaveform(np.zeros((1, 100)), FS),
                         np.ones((8, 16)))
        assert np.all(out.data == 0.0)

    def test_matches_naive_convolution(self):
        rng = np.random.default_rng(2)
        dry = rng.standard_normal(300)
        rirs = rng.standard_normal((3, 64))
        out = spatialize(MultichannelWaveform(dry[None, :], FS), rirs)
        for m in range(3):
            naive = np.zeros(300 + 64 - 1)
            for k in range(64):
                naive[k:k + 300] += rirs[m, k] * dry
            rel = np.abs(out.data[m] - naive).max() / np.abs(naive).max()
            assert rel < 1e-10

    def test_multichannel_dry_rejected(self):
        with pytest.raises(ValueError, match="single-channel"):
            spatialize(MultichannelWaveform(np.zeros((2, 10)), FS),
                       np.ones((8, 4)))


class TestMixPair:

    def _img(self, value, length, n_ch=2):
        return MultichannelWaveform(np.full((n_ch, length), float(value)), FS)

    def test_half_overlap_layout(self):
        scene = mix_pair(self._img(1.0, 80), self._img(2.0, 90),
                         overlap_ratio=0.5, target_len=100)
        a, b = scene.images
        # A spans [0, 80); B spans [30, 100); overlap = 50 samples
        assert np.all(a.data[:, :80] == 1.0) and np.all(a.data[:, 80:] == 0.0)
        assert np.all(b.data[:, :30] == 0.0) and np.all(b.data[:, 30:] == 2.0)
        assert np.all(scene.mixture.data[:, 30:80] == 3.0)
        scene.validate()

    def test_full_overlap(self):
        scene = mix_pair(self._img(1.0, 100), self._img(2.0, 100),
                         overlap_ratio=1.0, target_len=100)
        assert np.all(scene.mixture.data == 3.0)

    def test_long_sources_truncated(self):
        scene = mix_pair(self._img(1.0, 500), self._img(2.0, 500),
                         overlap_ratio=0.25, target_len=100)
        a, b = scene.images
        assert a.n_samples == 100 and b.n_samples == 100
        assert np.all(a.data == 1.0)  # A fills the whole window
        assert np.all(b.data[:, 75:] == 2.0) and np.all(b.data[:, :75] == 0.0)

    def test_zero_image_passthrough(self):
        scene = mix_pair(self._img(0.0, 100), self._img(2.0, 100),
                         overlap_ratio=1.0, target_len=100)
        assert np.array_equal(scene.mixture.data, scene.images[1].data)

    def test_errors(self):
        with pytest.raises(ValueError, match="overlap ratio"):
            mix_pair(self._img(1, 100), self._img(1, 100), 0.05, 100)
        with pytest.raises(ValueError, match="first image"):
            mix_pair(self._img(1, 40), self._img(1, 100), 0.5, 100)
        with pytest.raises(ValueError, match="second image"):
            mix_pair(self._img(1, 80), self._img(1, 60), 0.5, 100)
        with pytest.raises(ValueError, match="disagree"):
            mix_pair(self._img(1, 100), self._img(1, 100, n_ch=3), 0.5, 100)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mix_pair_span_arithmetic(seed):
    rng = np.random.default_rng(seed)
    target = 200
    ratio = rng.uniform(0.1, 1.0)
    len_a = rng.integers(int(np.ceil(ratio * target)), 2 * target)
    overlap = int(round(ratio * target))
    span_a = min(len_a, target)
    len_b = rng.integers(target + overlap - span_a, 2 * target)
    a = MultichannelWaveform(rng.standard_normal((2, len_a)), FS)
    b = MultichannelWaveform(rng.standard_normal((2, len_b)), FS)
    scene = mix_pair(a, b, ratio, target)
    active_a = np.flatnonzero(np.any(scene.images[0].data != 0.0, axis=0))
    active_b = np.flatnonzero(np.any(scene.images[1].data != 0.0, axis=0))
    assert active_a[0] == 0
    assert active_b[-1] == target - 1
    measured = active_a[-1] + 1 - active_b[0]
    assert abs(measured - overlap) <= 1
    assert np.array_equal(scene.mixture.data,
                          scene.images[0].data + scene.images[1].data)
