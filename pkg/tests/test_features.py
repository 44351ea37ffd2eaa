"""Tests for narrow-band feature packing and unpacking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbsep.features import SCALE_FLOOR, pack_input, unpack_output
from nbsep.stft import ComplexSpectrogram, StftConfig


def _spec_from(data):
    n_freqs = data.shape[1]
    cfg = StftConfig(window_length=2 * (n_freqs - 1), hop=n_freqs - 1)
    return ComplexSpectrogram(data=data, config=cfg)


def _random_spec(rng, n_ch=2, n_freqs=5, n_frames=7):
    data = rng.standard_normal((n_ch, n_freqs, n_frames)) \
        + 1j * rng.standard_normal((n_ch, n_freqs, n_frames))
    return _spec_from(data)


class TestPackInput:

    def test_constant_spectrogram_scale(self):
        # |X| = 2 everywhere on the reference channel, so every scale is 2
        # and the normalized reference rows are exactly (1, 0).
        data = np.full((2, 5, 7), 2.0 + 0.0j)
        batch = pack_input(_spec_from(data))
        assert batch.inputs.shape == (5, 4, 7)
        assert np.allclose(batch.scales, 2.0)
        assert np.allclose(batch.inputs[:, 0, :], 1.0)
        assert np.allclose(batch.inputs[:, 1, :], 0.0)

    def test_zero_frequency_is_floored(self):
        rng = np.random.default_rng(0)
        data = rng.standard_normal((2, 5, 7)) * (1 + 0j)
        data[:, 3, :] = 0.0
        batch = pack_input(_spec_from(data))
        assert batch.scales[3] == SCALE_FLOOR
        assert np.all(np.isfinite(batch.inputs))
        assert np.allclose(batch.inputs[3], 0.0)

    def test_interleaving_layout(self):
        rng = np.random.default_rng(1)
        spec = _random_spec(rng, n_ch=3)
        batch = pack_input(spec)
        normalized = spec.data / batch.scales[None, :, None]
        for ch in range(3):
            assert np.allclose(batch.inputs[:, 2 * ch, :],
                               normalized.real[ch].reshape(5, 7))
            assert np.allclose(batch.inputs[:, 2 * ch + 1, :],
                               normalized.imag[ch].reshape(5, 7))

    def test_ref_channel_selects_scale(self):
        rng = np.random.default_rng(2)
        spec = _random_spec(rng)
        b0 = pack_input(spec, ref_channel=0)
        b1 = pack_input(spec, ref_channel=1)
        expect0 = np.abs(spec.data[0]).mean(axis=1)
        expect1 = np.abs(spec.data[1]).mean(axis=1)
        assert np.allclose(b0.scales, expect0)
        assert np.allclose(b1.scales, expect1)
        assert not np.allclose(b0.scales, b1.scales)

    def test_ref_channel_out_of_range(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError, match="ref_channel"):
            pack_input(_random_spec(rng), ref_channel=2)

    def test_provenance(self):
        rng = np.random.default_rng(4)
        batch = pack_input(_random_spec(rng), utterance_id=9)
        assert batch.provenance == [(9, f) for f in range(5)]


class TestUnpackOutput:

    def test_round_trip_with_pack(self):
        rng = np.random.default_rng(5)
        spec = _random_spec(rng)
        batch = pack_input(spec)
        # Treat the packed rows as if they were network outputs: undoing the
        # interleave and reapplying the scale must recover the original.
        rebuilt = unpack_output(batch.inputs, batch.scales[:, None, None])
        original = spec.data.transpose(1, 0, 2)  # (F, M, T)
        assert np.abs(rebuilt - original).max() < 1e-12

    def test_slot_pairing(self):
        out = np.zeros((4, 3))
        out[0, :] = 1.0   # Re slot 0
        out[3, :] = 2.0   # Im slot 1
        y = unpack_output(out, 3.0)
        assert np.allclose(y[0], 3.0)
        assert np.allclose(y[1], 6.0j)

    def test_odd_rows_rejected(self):
        with pytest.raises(ValueError, match="even"):
            unpack_output(np.zeros((3, 4)), 1.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1),
       gain=st.sampled_from([1e-3, 0.5, 2.0, 1e3]))
def test_inputs_invariant_to_global_gain(seed, gain):
    # Scaling the waveform scales every channel of the spectrogram equally,
    # so the normalized inputs are unchanged and the scales absorb the gain.
    rng = np.random.default_rng(seed)
    spec = _random_spec(rng)
    scaled = ComplexSpectrogram(data=spec.data * gain, config=spec.config)
    a = pack_input(spec)
    b = pack_input(scaled)
    assert np.abs(a.inputs - b.inputs).max() < 1e-10
    assert np.allclose(b.scales, a.scales * gain, rtol=1e-10)
