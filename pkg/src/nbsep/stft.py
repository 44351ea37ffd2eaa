"""Forward/inverse STFT with exact overlap-add reconstruction.

Analysis uses a periodic Hann window. Synthesis applies the same window and
divides the overlap-add result by the accumulated squared window, which makes
``istft(stft(x))`` reproduce ``x`` to floating-point accuracy for every
sample: signals are zero-padded by ``window_length - hop`` at the head and
tail so each real sample is covered by a full complement of frames.

Frame count is deterministic in the signal length:
``T = ceil((n_samples + window_length - hop) / hop)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .audio import MultichannelWaveform

_WSUM_FLOOR = 1e-12


def periodic_hann(length: int) -> np.ndarray:
    """Hann taper with period ``length`` (not symmetric), exact COLA at hop = length/2."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 512
    hop: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_length <= 0 or self.hop <= 0:
            raise ValueError("window_length and hop must be positive")
        if self.window_length % self.hop != 0:
            raise ValueError(f"hop {self.hop} must divide window_length {self.window_length}")

    @property
    def n_freqs(self) -> int:
        return self.window_length // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return periodic_hann(self.window_length)

    @property
    def pad(self) -> int:
        """Head padding; guarantees full frame coverage of the first sample."""
        return self.window_length - self.hop

    def n_frames(self, n_samples: int) -> int:
        return int(np.ceil((n_samples + self.window_length - self.hop) / self.hop))

    def validate(self) -> None:
        """Check window range and the constant-overlap-add property."""
        w = self.window
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("window values must lie in [0, 1]")
        # OLA of the plain window over all hop shifts must be constant
        ola = np.zeros(2 * self.window_length)
        for start in range(0, self.window_length + 1, self.hop):
            ola[start:start + self.window_length] += w
        interior = ola[self.window_length - self.hop:self.window_length + self.hop]
        if np.ptp(interior) > 1e-10 * interior.mean():
            raise ValueError("window/hop pair does not satisfy constant overlap-add")


@dataclass
class ComplexSpectrogram:
    """Complex STFT coefficients, shape (channels, n_freqs, n_frames)."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"expected (channels, freqs, frames), got shape {self.data.shape}")
        if self.data.shape[1] != self.config.n_freqs:
            raise ValueError(
                f"frequency axis {self.data.shape[1]} does not match config "
                f"n_freqs {self.config.n_freqs}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_freqs(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]


@lru_cache(maxsize=8)
def _window_square_ola(window_length: int, hop: int, n_frames: int) -> np.ndarray:
    """Per-sample sum of squared windows over all frame positions."""
    w2 = periodic_hann(window_length) ** 2
    total = (n_frames - 1) * hop + window_length
    wsum = np.zeros(total)
    for t in range(n_frames):
        wsum[t * hop:t * hop + window_length] += w2
    return wsum


def _pad_signal(x: np.ndarray, cfg: StftConfig) -> tuple[np.ndarray, int]:
    n = x.shape[-1]
    n_frames = cfg.n_frames(n)
    padded_len = (n_frames - 1) * cfg.hop + cfg.window_length
    head = cfg.pad
    tail = padded_len - n - head
    padded = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(head, tail)])
    return padded, n_frames


def stft(x: MultichannelWaveform, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Windowed forward transform, (channels, samples) -> (channels, freqs, frames).

    Raises ValueError("signal too short") when the signal does not fill one
    analysis window.
    """
    cfg = cfg or StftConfig()
    data = np.asarray(x.data)
    if data.shape[-1] < cfg.window_length:
        raise ValueError("signal too short: need at least one full window")
    padded, n_frames = _pad_signal(data, cfg)
    frames = np.lib.stride_tricks.sliding_window_view(
        padded, cfg.window_length, axis=-1)[..., ::cfg.hop, :]
    window = cfg.window.astype(data.dtype if data.dtype.kind == "f" else np.float64)
    spec = np.fft.rfft(frames * window, axis=-1)  # (channels, frames, freqs)
    return ComplexSpectrogram(data=np.ascontiguousarray(spec.swapaxes(-1, -2)), config=cfg)


def istft(S: ComplexSpectrogram, cfg: StftConfig | None = None,
          out_length: int | None = None) -> MultichannelWaveform:
    """Overlap-add inverse transform, truncated/padded to ``out_length`` samples."""
    cfg = cfg or S.config
    if S.data.shape[1] != cfg.n_freqs:
        raise ValueError(
            f"spectrogram has {S.data.shape[1]} bins, config expects {cfg.n_freqs}")
    n_frames = S.n_frames
    wl, hop = cfg.window_length, cfg.hop
    if out_length is None:
        # largest signal length consistent with this frame count
        out_length = n_frames * hop - cfg.pad

    frames = np.fft.irfft(S.data.swapaxes(-1, -2), n=wl, axis=-1)  # (ch, frames, wl)
    frames *= cfg.window
    padded_len = (n_frames - 1) * hop + wl
    acc = np.zeros(S.data.shape[:1] + (padded_len,), dtype=frames.dtype)
    for t in range(n_frames):
        acc[:, t * hop:t * hop + wl] += frames[:, t]
    acc /= np.maximum(_window_square_ola(wl, hop, n_frames), _WSUM_FLOOR)

    head = cfg.pad
    out = acc[:, head:head + out_length]
    if out.shape[1] < out_length:
        out = np.pad(out, [(0, 0), (0, out_length - out.shape[1])])
    return MultichannelWaveform(data=out, sample_rate=cfg.sample_rate)


def istft_adjoint(grad_wave: np.ndarray, cfg: StftConfig, n_frames: int) -> np.ndarray:
    """Adjoint of ``istft`` as a real-linear map, for backpropagation.

    Given d(loss)/d(waveform) of shape (channels, out_length), returns the
    complex array g of shape (channels, n_freqs, n_frames) with
    Re(g) = d(loss)/d(Re S) and Im(g) = d(loss)/d(Im S).
    """
    grad_wave = np.atleast_2d(np.asarray(grad_wave))
    wl, hop = cfg.window_length, cfg.hop
    padded_len = (n_frames - 1) * hop + wl
    head = cfg.pad

    g = np.zeros(grad_wave.shape[:1] + (padded_len,), dtype=grad_wave.dtype)
    usable = min(grad_wave.shape[1], padded_len - head)
    g[:, head:head + usable] = grad_wave[:, :usable]
    g /= np.maximum(_window_square_ola(wl, hop, n_frames), _WSUM_FLOOR)

    # adjoint of overlap-add is frame extraction
    frames = np.lib.stride_tricks.sliding_window_view(g, wl, axis=-1)[..., ::hop, :]
    spec = np.fft.rfft(frames * cfg.window, axis=-1)
    # irfft treats interior bins twice (conjugate symmetry), DC/Nyquist once
    scale = np.full(cfg.n_freqs, 2.0 / wl)
    scale[0] = 1.0 / wl
    if wl % 2 == 0:
        scale[-1] = 1.0 / wl
    spec *= scale
    return np.ascontiguousarray(spec.swapaxes(-1, -2))
