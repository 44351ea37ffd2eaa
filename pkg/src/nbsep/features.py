"""Narrow-band network features: normalization, complex-to-real packing.

Each frequency of a multichannel spectrogram becomes one network input item:
the per-channel complex sequences are divided by the reference channel's mean
magnitude at that frequency and interleaved as (Re ch0, Im ch0, Re ch1, ...)
rows. The stored scale lets outputs be mapped back to the original signal
level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stft import ComplexSpectrogram

SCALE_FLOOR = 1e-8


@dataclass
class NarrowbandBatch:
    """Per-frequency real input sequences.

    inputs: (n_items, 2 * n_channels, n_frames); item i is frequency
        provenance[i][1] of utterance provenance[i][0].
    scales: (n_items,) positive normalization factors (mean reference-channel
        magnitude, floored at SCALE_FLOOR).
    """

    inputs: np.ndarray
    scales: np.ndarray
    provenance: list = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return self.inputs.shape[0]


def pack_input(S: ComplexSpectrogram, ref_channel: int = 0,
               utterance_id=0, dtype=np.float64) -> NarrowbandBatch:
    """Normalize and interleave a spectrogram into per-frequency input items."""
    data = S.data  # (M, F, T)
    n_ch, n_freqs, n_frames = data.shape
    if not 0 <= ref_channel < n_ch:
        raise ValueError(f"ref_channel {ref_channel} out of range for {n_ch} channels")

    scales = np.maximum(np.abs(data[ref_channel]).mean(axis=1), SCALE_FLOOR)  # (F,)
    normalized = data / scales[None, :, None]

    inputs = np.empty((n_freqs, 2 * n_ch, n_frames), dtype=dtype)
    inputs[:, 0::2, :] = normalized.real.transpose(1, 0, 2)
    inputs[:, 1::2, :] = normalized.imag.transpose(1, 0, 2)
    provenance = [(utterance_id, f) for f in range(n_freqs)]
    return NarrowbandBatch(inputs=inputs, scales=scales.astype(dtype),
                           provenance=provenance)


def unpack_output(out: np.ndarray, scale: float | np.ndarray) -> np.ndarray:
    """Interleaved real rows back to complex sequences, times the stored scale.

    out: (..., 2N, T) real; returns (..., N, T) complex with
    result[..., n, :] = (out[..., 2n, :] + i out[..., 2n+1, :]) * scale.
    """
    out = np.asarray(out)
    if out.shape[-2] % 2 != 0:
        raise ValueError(f"leading output dimension must be even, got {out.shape[-2]}")
    return (out[..., 0::2, :] + 1j * out[..., 1::2, :]) * scale
