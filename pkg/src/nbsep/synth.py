"""Synthetic surrogate sources: colored noise with slow amplitude modulation.

Each seed produces a source with its own spectral resonance and its own
modulation rates, so different sources have distinct magnitude envelopes at
every frequency (the cue both the separator and the correlation-based
permutation alignment rely on) while keeping energy across the full band.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .audio import MultichannelWaveform


def surrogate_source(seed, duration: float, fs: int = 16000) -> MultichannelWaveform:
    """Unit-RMS single-channel surrogate utterance, deterministic per seed."""
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration * fs))
    noise = rng.standard_normal(n_samples)

    # speaker-distinct coloring: one resonance over a broadband floor
    center = rng.uniform(300.0, 2500.0)
    bandwidth = rng.uniform(200.0, 800.0)
    pole = np.exp(-np.pi * bandwidth / fs)
    theta = 2.0 * np.pi * center / fs
    colored = lfilter([1.0], [1.0, -2.0 * pole * np.cos(theta), pole * pole],
                      noise)
    colored = colored / np.sqrt(np.mean(colored ** 2)) + 0.2 * noise

    # slow two-rate amplitude modulation, rates and phases per speaker
    t = np.arange(n_samples) / fs
    rate1 = rng.uniform(0.6, 2.5)
    rate2 = rng.uniform(2.5, 6.0)
    phase1, phase2 = rng.uniform(0.0, 2.0 * np.pi, 2)
    env = (0.15 + 0.85 * (0.5 + 0.5 * np.sin(2.0 * np.pi * rate1 * t + phase1))) \
        * (0.30 + 0.70 * (0.5 + 0.5 * np.sin(2.0 * np.pi * rate2 * t + phase2)))
    x = colored * env
    x = x / np.sqrt(np.mean(x ** 2))
    return MultichannelWaveform(data=x[None, :], sample_rate=fs)
