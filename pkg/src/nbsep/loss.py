"""Full-band permutation-invariant training loss.

Per-frequency network outputs are bound by output position into full-band
spectra, inverse-transformed to waveforms, and scored against the reference
sources with negative SI-SDR under the best single speaker permutation
shared by all frequencies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .stft import ComplexSpectrogram, StftConfig, istft, istft_adjoint

RATIO_FLOOR = 1e-8       # clamps the SI-SDR power ratio; loss stays in +-80 dB
RATIO_CEIL = 1e8
MAX_PERM_SOURCES = 6
_LOG10_SCALE = 10.0 / np.log(10.0)


def si_sdr_loss(ref, est) -> float:
    """Negative SI-SDR of an estimate against a reference waveform.

    The estimate is projected onto the reference (alpha = est.T ref / ||ref||^2)
    and the loss is -10 log10(||alpha ref||^2 / ||alpha ref - est||^2), with
    the ratio clamped to [1e-8, 1e8] so exact matches and orthogonal
    estimates score -80 / +80 instead of diverging.
    """
    loss, _ = _si_sdr_loss_grad(ref, est, need_grad=False)
    return loss


def _si_sdr_loss_grad(ref, est, need_grad=True):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 1:
        raise ValueError(f"waveform shapes differ: {ref.shape} vs {est.shape}")
    yty = float(ref @ ref)
    if yty == 0.0:
        raise ValueError("undefined SI-SDR for an all-zero reference")
    alpha = float(est @ ref) / yty
    num = alpha * alpha * yty
    err = alpha * ref - est
    den = float(err @ err)
    ratio = np.inf if den == 0.0 else num / den
    clamped = ratio < RATIO_FLOOR or ratio > RATIO_CEIL
    loss = -10.0 * np.log10(min(max(ratio, RATIO_FLOOR), RATIO_CEIL))
    if not need_grad:
        return loss, None
    if clamped:
        # the clamp is a constant region, so the gradient vanishes there
        return loss, np.zeros_like(est)
    grad = -_LOG10_SCALE * (2.0 * alpha / num * ref + 2.0 / den * err)
    return loss, grad


@dataclass
class FullbandEstimate:
    """Per-slot full-band spectra and their time-domain reconstructions.

    spectra: complex (n_slots, n_freqs, n_frames); waveforms
    (n_slots, n_samples).
    """

    spectra: np.ndarray
    waveforms: np.ndarray
    config: StftConfig


@dataclass
class FpitResult:
    """Chosen permutation and its loss.

    permutation maps reference index -> estimate slot; per_pair_losses[n, k]
    is the loss of slot k scored against reference n.
    """

    loss: float
    permutation: tuple
    per_pair_losses: np.ndarray


def assemble_fullband(per_freq_outputs, scales, config: StftConfig,
                      n_samples: int) -> FullbandEstimate:
    """Bind per-frequency outputs into full-band estimates.

    Args:
        per_freq_outputs: complex (n_freqs, n_slots, n_frames), normalized
            per-frequency sequences in network output order.
        scales: (n_freqs,) normalization factors to restore signal level.
        config: analysis/synthesis parameters.
        n_samples: target waveform length.

    Returns:
        FullbandEstimate with spectra (n_slots, n_freqs, n_frames) and
        waveforms (n_slots, n_samples).
    """
    outputs = np.asarray(per_freq_outputs)
    scales = np.asarray(scales, dtype=np.float64)
    if outputs.ndim != 3 or outputs.shape[0] != scales.shape[0]:
        raise ValueError(f"outputs {outputs.shape} inconsistent with "
                         f"{scales.shape[0]} scales")
    spectra = outputs.transpose(1, 0, 2) * scales[None, :, None]
    waveforms = istft(ComplexSpectrogram(data=spectra, config=config),
                      out_length=n_samples).data
    return FullbandEstimate(spectra=spectra, waveforms=waveforms, config=config)


def fpit(est: FullbandEstimate, targets) -> FpitResult:
    """Best single speaker permutation over full-band waveform losses.

    Searches all permutations of estimate slots against reference waveforms,
    minimizing the mean per-pair si_sdr_loss; ties break toward the
    lexicographically smallest permutation.
    """
    targets = np.asarray(targets, dtype=np.float64)
    n_sources = targets.shape[0]
    if est.waveforms.shape[0] != n_sources:
        raise ValueError(f"{est.waveforms.shape[0]} estimate slots for "
                         f"{n_sources} references")
    if n_sources > MAX_PERM_SOURCES:
        raise ValueError("permutation search too large")
    pair = np.empty((n_sources, n_sources))
    for n in range(n_sources):
        for k in range(n_sources):
            pair[n, k] = si_sdr_loss(targets[n], est.waveforms[k])
    best_loss = np.inf
    best_perm = None
    for perm in itertools.permutations(range(n_sources)):
        value = pair[np.arange(n_sources), perm].mean()
        if value < best_loss:
            best_loss = value
            best_perm = perm
    return FpitResult(loss=float(best_loss), permutation=best_perm,
                      per_pair_losses=pair)


def fpit_grad(est: FullbandEstimate, targets, result: FpitResult,
              scales) -> np.ndarray:
    """Gradient of the fpit loss w.r.t. the per-frequency network outputs.

    The permutation is held fixed at its argmin. Returns a real array
    (n_freqs, 2 * n_slots, n_frames) matching the interleaved Re/Im layout
    of the separator outputs.
    """
    targets = np.asarray(targets, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    n_sources, n_freqs, n_frames = est.spectra.shape
    grad_wave = np.zeros_like(est.waveforms, dtype=np.float64)
    for n, k in enumerate(result.permutation):
        _, g = _si_sdr_loss_grad(targets[n], est.waveforms[k])
        grad_wave[k] = g / n_sources
    gspec = istft_adjoint(grad_wave, est.config, n_frames=n_frames)
    gspec = gspec.transpose(1, 0, 2) * scales[:, None, None]  # (F, N, T)
    grad_out = np.empty((n_freqs, 2 * n_sources, n_frames))
    grad_out[:, 0::2, :] = gspec.real
    grad_out[:, 1::2, :] = gspec.imag
    return grad_out
