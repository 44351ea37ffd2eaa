"""Separation scoring and manifest-level evaluation reports.

Per utterance, estimates are matched to references by the speaker permutation
with the best mean SI-SDR; improvements are measured against the unprocessed
mixture at the reference channel. Utterance scores average over speakers
first, then over utterances, and are additionally bucketed by reverberation
time, speaker angular difference, and overlap ratio.
"""

from __future__ import annotations

import itertools
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .audio import read_wav
from .dataset import load_scene, read_manifest
from .loss import MAX_PERM_SOURCES, RATIO_CEIL, RATIO_FLOOR, si_sdr_loss

METRIC_NAMES = ("sdr", "si_sdr", "sdri", "si_sdri")

# bucket edges for the three grouping keys (last edge inclusive)
RT60_EDGES = (0.1, 0.3, 0.5, 0.7, 1.0)
ANGLE_EDGES = (0.0, 15.0, 45.0, 90.0, 180.0)
OVERLAP_EDGES = (0.1, 0.25, 0.5, 0.75, 1.0)


def si_sdr_metric(ref, est) -> float:
    """Scale-invariant SDR in dB (higher is better), clamped to +-80."""
    return -si_sdr_loss(ref, est)


def sdr_metric(ref, est) -> float:
    """Scale-projection SDR in dB: the estimate is compared against the
    least-squares rescaling of the reference (no allowed-distortion filter),
    which makes it numerically equal to SI-SDR; it is reported separately
    so downstream tables keep both columns."""
    ref = np.asarray(ref, dtype=np.float64).ravel()
    est = np.asarray(est, dtype=np.float64).ravel()
    if ref.shape != est.shape:
        raise ValueError(f"shapes differ: {ref.shape} vs {est.shape}")
    energy = ref @ ref
    if energy == 0.0:
        raise ValueError("undefined SDR for an all-zero reference")
    alpha = (est @ ref) / energy
    projected = alpha * ref
    distortion = est - projected
    num = projected @ projected
    den = distortion @ distortion
    ratio = np.inf if den == 0.0 else num / den
    return float(10.0 * np.log10(np.clip(ratio, RATIO_FLOOR, RATIO_CEIL)))


@dataclass
class UtteranceScores:
    """Scores for one utterance under the best speaker assignment."""

    utterance_id: str
    permutation: tuple
    per_speaker: list          # one dict of METRIC_NAMES per speaker
    rt60: float
    angular_difference: float
    overlap_ratio: float

    def mean(self, name: str) -> float:
        return float(np.mean([s[name] for s in self.per_speaker]))


def score_utterance(utterance_id, references, estimates, mixture_ref,
                    rt60=np.nan, angular_difference=np.nan,
                    overlap_ratio=np.nan) -> UtteranceScores:
    """Scores one utterance.

    Args:
      utterance_id: manifest id for reporting.
      references: (n_speakers, n_samples) reference-channel images.
      estimates: (n_speakers, n_samples) system outputs, any slot order.
      mixture_ref: (n_samples,) unprocessed mixture at the reference channel.

    Returns:
      UtteranceScores with the permutation resolved by best mean SI-SDR.
    """
    references = np.asarray(references, dtype=np.float64)
    estimates = np.asarray(estimates, dtype=np.float64)
    if references.shape != estimates.shape:
        raise ValueError(f"references {references.shape} and estimates "
                         f"{estimates.shape} disagree")
    n_speakers = references.shape[0]
    if n_speakers > MAX_PERM_SOURCES:
        raise ValueError("permutation search too large")

    pair = np.empty((n_speakers, n_speakers))
    for n in range(n_speakers):
        for k in range(n_speakers):
            pair[n, k] = si_sdr_metric(references[n], estimates[k])
    best_perm, best_value = None, -np.inf
    for perm in itertools.permutations(range(n_speakers)):
        value = pair[np.arange(n_speakers), perm].mean()
        if value > best_value:
            best_value = value
            best_perm = perm

    per_speaker = []
    for n, k in enumerate(best_perm):
        base_si = si_sdr_metric(references[n], mixture_ref)
        base_sdr = sdr_metric(references[n], mixture_ref)
        si = pair[n, k]
        sdr = sdr_metric(references[n], estimates[k])
        per_speaker.append({"sdr": sdr, "si_sdr": si,
                            "sdri": sdr - base_sdr, "si_sdri": si - base_si})
    return UtteranceScores(utterance_id=utterance_id, permutation=best_perm,
                           per_speaker=per_speaker, rt60=rt60,
                           angular_difference=angular_difference,
                           overlap_ratio=overlap_ratio)


def _bucket_label(value: float, edges) -> str:
    if np.isnan(value):
        return "unknown"
    for lo, hi in zip(edges[:-1], edges[1:]):
        if lo <= value < hi or (hi == edges[-1] and value == hi):
            return f"{lo:g}-{hi:g}"
    return "out-of-range"


@dataclass
class EvalReport:
    """All scored utterances plus their aggregated views."""

    utterances: list                      # UtteranceScores, manifest order
    overall: dict                         # mean over utterances per metric
    buckets: dict                         # key -> [(label, count, means)]
    missing: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("utterance_id,speaker,rt60,angular_difference,"
                    "overlap_ratio,sdr,si_sdr,sdri,si_sdri\n")
            for u in self.utterances:
                for n, scores in enumerate(u.per_speaker):
                    f.write(f"{u.utterance_id},{n + 1},{u.rt60:.6g},"
                            f"{u.angular_difference:.6g},"
                            f"{u.overlap_ratio:.6g},"
                            + ",".join(f"{scores[m]:.6f}"
                                       for m in METRIC_NAMES) + "\n")

    def write_summary(self, path) -> None:
        lines = [f"utterances scored: {len(self.utterances)}"]
        if self.missing:
            lines.append("skipped (missing outputs): "
                         + ", ".join(self.missing))
        lines.append("")
        lines.append("overall means (dB; SDR is the scale-projection "
                     "variant, no allowed-distortion filter)")
        lines.append("  " + "  ".join(f"{m}={self.overall[m]:.2f}"
                                      for m in METRIC_NAMES))
        for key, rows in self.buckets.items():
            lines.append("")
            lines.append(f"by {key}:")
            lines.append(f"  {'bucket':>12}  {'count':>5}  "
                         + "  ".join(f"{m:>8}" for m in METRIC_NAMES))
            for label, count, means in rows:
                lines.append(f"  {label:>12}  {count:>5}  "
                             + "  ".join(f"{means[m]:>8.2f}"
                                         for m in METRIC_NAMES))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")


def aggregate_scores(utterances, missing=None) -> EvalReport:
    """Means over utterances (speaker-mean first) and bucketed means."""
    overall = {m: float(np.mean([u.mean(m) for u in utterances]))
               if utterances else np.nan for m in METRIC_NAMES}
    groupings = (
        ("rt60", lambda u: _bucket_label(u.rt60, RT60_EDGES)),
        ("angular_difference",
         lambda u: _bucket_label(u.angular_difference, ANGLE_EDGES)),
        ("overlap_ratio",
         lambda u: _bucket_label(u.overlap_ratio, OVERLAP_EDGES)),
    )
    buckets = {}
    for key, labeler in groupings:
        by_label = {}
        for u in utterances:
            by_label.setdefault(labeler(u), []).append(u)
        rows = []
        for label in sorted(by_label):
            members = by_label[label]
            means = {m: float(np.mean([u.mean(m) for u in members]))
                     for m in METRIC_NAMES}
            rows.append((label, len(members), means))
        buckets[key] = rows
    return EvalReport(utterances=list(utterances), overall=overall,
                      buckets=buckets, missing=list(missing or []))


def estimate_paths(est_dir, scene_id, n_speakers):
    return [os.path.join(est_dir, scene_id, f"est_spk{n + 1}.wav")
            for n in range(n_speakers)]


def evaluate_manifest(manifest_path, est_dir, ref_channel: int = 0
                      ) -> EvalReport:
    """Scores every manifest entry against estimates on disk.

    Estimates are expected at <est_dir>/<id>/est_spk{n}.wav. Entries with
    missing estimate files are listed in the report and skipped with a
    warning rather than failing the run.
    """
    entries = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    scored, missing = [], []
    for entry in entries:
        mixture, images = load_scene(entry, base)
        paths = estimate_paths(est_dir, entry.scene_id, len(images))
        if not all(os.path.exists(p) for p in paths):
            warnings.warn(f"missing estimates for {entry.scene_id}, skipping")
            missing.append(entry.scene_id)
            continue
        estimates = np.stack([read_wav(p).data[0] for p in paths])
        references = np.stack([img.data[ref_channel] for img in images])
        scored.append(score_utterance(
            entry.scene_id, references, estimates,
            mixture.data[ref_channel], rt60=entry.scenario.rt60,
            angular_difference=entry.scenario.angular_difference,
            overlap_ratio=entry.overlap_ratio))
    return aggregate_scores(scored, missing=missing)
