"""End-to-end separation of a mixture with a trained model.

Pipeline: STFT -> per-frequency normalization/packing -> shared network ->
complex outputs -> full-band reassembly -> iSTFT. Optionally the
per-frequency slot ordering is re-aligned by envelope correlation before
reassembly (for models trained without a full-band criterion).
"""

from __future__ import annotations

import numpy as np

from .audio import MultichannelWaveform
from .baselines import align_permutations_correlation
from .features import pack_input, unpack_output
from .loss import assemble_fullband
from .model import ModelParams, forward
from .stft import StftConfig, stft


def separate_mixture(params: ModelParams, mixture: MultichannelWaveform,
                     stft_cfg: StftConfig = None, ref_channel: int = 0,
                     correlation_align: bool = False):
    """Separates one mixture into per-speaker single-channel waveforms.

    Args:
        params: trained separator parameters.
        mixture: (M, n_samples) input; M must match the checkpoint.
        stft_cfg: analysis parameters.
        ref_channel: microphone used for input normalization (the output
            approximates each speaker's image at this channel).
        correlation_align: re-align per-frequency slots by envelope
            correlation before reassembly.

    Returns:
        list of n_speakers MultichannelWaveform (1, n_samples) estimates.
    """
    if stft_cfg is None:
        stft_cfg = StftConfig()
    expected = params.config.n_input // 2
    if mixture.n_channels != expected:
        raise ValueError(f"checkpoint expects {expected}-channel input, "
                         f"mixture has {mixture.n_channels} channels")
    spec = stft(mixture, stft_cfg)
    batch = pack_input(spec, ref_channel=ref_channel, dtype=params.dtype)
    outputs, _ = forward(params, batch.inputs, collect_trace=False)
    per_freq = unpack_output(np.asarray(outputs, dtype=np.float64), 1.0)
    if correlation_align:
        per_freq = align_permutations_correlation(per_freq).apply(per_freq)
    est = assemble_fullband(per_freq, batch.scales, stft_cfg,
                            mixture.n_samples)
    return [MultichannelWaveform(data=est.waveforms[n][None, :],
                                 sample_rate=mixture.sample_rate)
            for n in range(est.waveforms.shape[0])]
