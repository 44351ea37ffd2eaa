"""Multichannel waveform container and float32 WAV file I/O.

WAV files are written as 32-bit float so that round-trips through disk are
bit-exact and do not interfere with tight numerical tolerances elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass
class MultichannelWaveform:
    """Time-domain samples, shape (channels, samples), plus sample rate."""

    data: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data))
        if self.data.ndim != 2:
            raise ValueError(f"expected (channels, samples), got shape {self.data.shape}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.data.shape[1] / self.sample_rate

    def channel(self, m: int) -> np.ndarray:
        return self.data[m]


def read_wav(path: str | Path) -> MultichannelWaveform:
    """Read a WAV file into (channels, samples) float64.

    Integer PCM is rescaled to [-1, 1); float files are passed through
    unchanged.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    # wavfile returns (samples, channels)
    data = data.T
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    return MultichannelWaveform(data=data, sample_rate=int(rate))


def write_wav(path: str | Path, wav: MultichannelWaveform) -> None:
    """Write (channels, samples) as a 32-bit float WAV."""
    out = np.ascontiguousarray(wav.data.T.astype(np.float32))
    if out.shape[1] == 1:
        out = out[:, 0]
    wavfile.write(str(path), wav.sample_rate, out)
