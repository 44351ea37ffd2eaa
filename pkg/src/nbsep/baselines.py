"""Oracle beamforming and frequency-permutation alignment baselines.

The MVDR baseline has oracle access to the true per-speaker spatial images:
it estimates the undesired-signal covariance and the target steering vector
from them, then applies a distortionless minimum-variance beamformer per
frequency. The permutation utilities resolve the per-frequency source
ordering, either against references (oracle) or blindly from the correlation
of magnitude envelopes across frequencies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .audio import MultichannelWaveform
from .loss import MAX_PERM_SOURCES
from .stft import ComplexSpectrogram, StftConfig, istft, stft

# smallest meaningful signal power; below this a frequency is treated as
# target-free and its beamformer is zeroed out
_POWER_FLOOR = 1e-30


@dataclass
class MvdrResult:
    """Beamformer output plus the per-frequency solution for inspection."""

    waveform: MultichannelWaveform          # (1, n_samples)
    weights: np.ndarray                     # (n_freqs, n_mics) complex
    steering: np.ndarray                    # (n_freqs, n_mics) complex


def _covariances(spec_data: np.ndarray) -> np.ndarray:
    """(M, F, T) spectrogram -> (F, M, M) time-averaged covariance."""
    n_frames = spec_data.shape[2]
    return np.einsum("mft,nft->fmn", spec_data, spec_data.conj()) / n_frames


def _steering_vector(cov_target: np.ndarray, ref_channel: int) -> np.ndarray:
    """Principal eigenvector of the target covariance, phase-normalized so
    the reference entry is real-positive and scaled so that entry equals the
    target's reference-channel magnitude ratio."""
    trace = float(np.trace(cov_target).real)
    if trace <= _POWER_FLOOR:
        return np.zeros(cov_target.shape[0], dtype=complex)
    _, vecs = np.linalg.eigh(cov_target)
    v = vecs[:, -1]  # eigenvalues ascending
    ref = v[ref_channel]
    if abs(ref) > 0:
        v = v * (ref.conjugate() / abs(ref))
    ratio = np.sqrt(max(cov_target[ref_channel, ref_channel].real, 0.0)
                    / trace)
    ref_mag = abs(v[ref_channel])
    if ref_mag <= _POWER_FLOOR:
        return np.zeros(cov_target.shape[0], dtype=complex)
    return v * (ratio / ref_mag)


def _solve_loaded(cov: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solves cov x = d with escalating diagonal loading until it succeeds."""
    n = cov.shape[0]
    delta = 1e-6 * max(float(np.trace(cov).real), _POWER_FLOOR) / n
    eye = np.eye(n)
    for _ in range(60):
        try:
            x = np.linalg.solve(cov + delta * eye, d)
        except np.linalg.LinAlgError:
            x = None
        if x is not None and np.all(np.isfinite(x)):
            return x
        delta *= 10.0
    raise np.linalg.LinAlgError("covariance could not be regularized")


def oracle_mvdr(mixture: MultichannelWaveform,
                target_image: MultichannelWaveform,
                undesired: MultichannelWaveform,
                ref_channel: int = 0,
                stft_cfg: StftConfig = None) -> MvdrResult:
    """Per-frequency MVDR with oracle target/undesired signals.

    Args:
        mixture: observed (M, n_samples) mixture.
        target_image: the target speaker's true spatial image (M, n_samples).
        undesired: everything else in the mixture (M, n_samples).
        ref_channel: microphone whose image the output should approximate.
        stft_cfg: analysis parameters.

    Returns:
        MvdrResult; frequencies with no target energy get zero weights
        (nothing to pass), all others satisfy w^H d = 1.
    """
    if stft_cfg is None:
        stft_cfg = StftConfig()
    for name, wav in (("target image", target_image),
                      ("undesired", undesired)):
        if wav.n_channels != mixture.n_channels:
            raise ValueError(f"{name} has {wav.n_channels} channels, "
                             f"mixture has {mixture.n_channels}")
        if wav.n_samples != mixture.n_samples:
            raise ValueError(f"{name} length {wav.n_samples} does not match "
                             f"mixture length {mixture.n_samples}")
    if not 0 <= ref_channel < mixture.n_channels:
        raise ValueError(f"ref_channel {ref_channel} out of range")

    mix_spec = stft(mixture, stft_cfg).data          # (M, F, T)
    cov_u = _covariances(stft(undesired, stft_cfg).data)
    cov_s = _covariances(stft(target_image, stft_cfg).data)
    n_mics, n_freqs, n_frames = mix_spec.shape

    weights = np.zeros((n_freqs, n_mics), dtype=complex)
    steering = np.zeros((n_freqs, n_mics), dtype=complex)
    out_spec = np.zeros((1, n_freqs, n_frames), dtype=complex)
    for f in range(n_freqs):
        d = _steering_vector(cov_s[f], ref_channel)
        steering[f] = d
        if not np.any(d):
            continue
        x = _solve_loaded(cov_u[f], d)
        denom = d.conj() @ x
        weights[f] = x / denom
        out_spec[0, f] = weights[f].conj() @ mix_spec[:, f, :]

    waveform = istft(ComplexSpectrogram(data=out_spec, config=stft_cfg),
                     out_length=mixture.n_samples)
    waveform.sample_rate = mixture.sample_rate
    return MvdrResult(waveform=waveform, weights=weights, steering=steering)


@dataclass
class FrequencyPermutationMap:
    """One slot permutation per frequency: aligned[f, n] = sep[f, perms[f, n]]."""

    perms: np.ndarray  # (n_freqs, n_slots) int

    def apply(self, sep: np.ndarray) -> np.ndarray:
        sep = np.asarray(sep)
        if sep.shape[:2] != self.perms.shape:
            raise ValueError(f"map for {self.perms.shape} cannot be applied "
                             f"to {sep.shape[:2]}")
        return np.take_along_axis(sep, self.perms[:, :, None], axis=1)


def _permutations(n_slots: int):
    if n_slots > MAX_PERM_SOURCES:
        raise ValueError("permutation search too large")
    return list(itertools.permutations(range(n_slots)))


def per_frequency_pit(pred: np.ndarray, target: np.ndarray
                      ) -> FrequencyPermutationMap:
    """Oracle per-frequency alignment: for each frequency, the permutation of
    prediction slots minimizing the summed squared complex error against the
    targets. Ties break toward the identity (first in enumeration order)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape or pred.ndim != 3:
        raise ValueError(f"pred {pred.shape} and target {target.shape} must "
                         "both be (n_freqs, n_slots, n_frames)")
    n_freqs, n_slots, _ = pred.shape
    # cost[f, n, k]: error of prediction slot k against target slot n
    diff = pred[:, None, :, :] - target[:, :, None, :]
    cost = np.sum(np.abs(diff) ** 2, axis=3)
    perms = np.empty((n_freqs, n_slots), dtype=np.int64)
    candidates = _permutations(n_slots)
    idx = np.arange(n_slots)
    for f in range(n_freqs):
        best = np.inf
        for perm in candidates:
            value = cost[f, idx, perm].sum()
            if value < best:
                best = value
                perms[f] = perm
    return FrequencyPermutationMap(perms=perms)


def _standardized_envelopes(sep: np.ndarray) -> np.ndarray:
    """Per-(frequency, slot) magnitude envelopes, mean-removed and scaled to
    unit variance; zero-variance envelopes become all-zero (correlation 0)."""
    env = np.abs(np.asarray(sep)).astype(np.float64)
    env -= env.mean(axis=2, keepdims=True)
    std = env.std(axis=2, keepdims=True)
    return np.divide(env, std, out=np.zeros_like(env), where=std > 0)


def _best_permutation(corr: np.ndarray, candidates) -> tuple:
    """Maximizes sum of corr[n, perm[n]]; ties keep the earlier candidate
    (identity first)."""
    idx = np.arange(corr.shape[0])
    best_value = -np.inf
    best_perm = candidates[0]
    for perm in candidates:
        value = corr[idx, perm].sum()
        if value > best_value:
            best_value = value
            best_perm = perm
    return best_perm


def align_permutations_correlation(sep: np.ndarray) -> FrequencyPermutationMap:
    """Blind frequency-permutation alignment from envelope correlation.

    A greedy pass walks the frequencies in order, aligning each one to the
    running centroid of the already-aligned standardized envelopes (Pearson
    correlation, summed over slots). One refinement sweep then re-aligns
    every frequency against the final centroids.

    Args:
        sep: (n_freqs, n_slots, n_frames) complex separated spectra.

    Returns:
        FrequencyPermutationMap whose apply() gives globally consistent slots.
    """
    sep = np.asarray(sep)
    if sep.ndim != 3:
        raise ValueError(f"expected (n_freqs, n_slots, n_frames), got {sep.shape}")
    n_freqs, n_slots, n_frames = sep.shape
    candidates = _permutations(n_slots)
    env = _standardized_envelopes(sep)
    perms = np.tile(np.arange(n_slots, dtype=np.int64), (n_freqs, 1))

    def corr_against(centroid, f):
        # envelopes are standardized, so Pearson(centroid_n, env_k) is the
        # mean product divided by the centroid's own std
        raw = centroid @ env[f].T / n_frames          # (n_slots, n_slots)
        std = centroid.std(axis=1, keepdims=True)
        return np.divide(raw, std, out=np.zeros_like(raw), where=std > 0)

    centroid_sum = env[0].copy()
    for f in range(1, n_freqs):
        perm = _best_permutation(corr_against(centroid_sum / f, f), candidates)
        perms[f] = perm
        centroid_sum += env[f][list(perm)]

    centroid = centroid_sum / n_freqs
    for f in range(n_freqs):
        perms[f] = _best_permutation(corr_against(centroid, f), candidates)
    return FrequencyPermutationMap(perms=perms)
