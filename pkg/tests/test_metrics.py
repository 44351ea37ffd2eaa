"""Tests for separation metrics and manifest evaluation."""

import os

import numpy as np
import pytest

from nbsep.dataset import generate_scene, write_manifest, write_scene
from nbsep.audio import MultichannelWaveform, write_wav
from nbsep.metrics import (METRIC_NAMES, UtteranceScores, aggregate_scores,
                           evaluate_manifest, score_utterance, sdr_metric,
                           si_sdr_metric)


def orthogonal_noise(ref, rng):
    noise = rng.standard_normal(ref.shape)
    noise -= (noise @ ref) / (ref @ ref) * ref
    return noise


def with_snr(ref, snr_db, rng):
    noise = orthogonal_noise(ref, rng)
    scale = np.linalg.norm(ref) / np.linalg.norm(noise) * 10 ** (-snr_db / 20)
    return ref + scale * noise


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_si_sdr_known_snr():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal(4000)
    for snr in (20.0, 30.0, 40.0):
        assert abs(si_sdr_metric(ref, with_snr(ref, snr, rng)) - snr) < 1e-6


def test_si_sdr_perfect_clamps():
    ref = np.sin(np.arange(200) * 0.1)
    assert si_sdr_metric(ref, ref) == 80.0


def test_sdr_equals_si_sdr_numerically():
    rng = np.random.default_rng(1)
    for _ in range(5):
        ref = rng.standard_normal(500)
        est = rng.standard_normal(500)
        assert abs(sdr_metric(ref, est) - si_sdr_metric(ref, est)) < 1e-10


def test_sdr_scale_invariance():
    rng = np.random.default_rng(2)
    ref = rng.standard_normal(300)
    est = with_snr(ref, 15.0, rng)
    base = sdr_metric(ref, est)
    for c in (1e-3, 1.0, 1e3, -2.0):
        assert abs(sdr_metric(ref, c * est) - base) < 1e-9


def test_sdr_zero_reference_rejected():
    with pytest.raises(ValueError, match="all-zero reference"):
        sdr_metric(np.zeros(10), np.ones(10))
    with pytest.raises(ValueError, match="shapes differ"):
        sdr_metric(np.ones(10), np.ones(11))


# ---------------------------------------------------------------------------
# utterance scoring
# ---------------------------------------------------------------------------

def two_speaker_case(seed, n=2000):
    rng = np.random.default_rng(seed)
    refs = rng.standard_normal((2, n))
    mixture_ref = refs.sum(axis=0)
    return refs, mixture_ref, rng


def test_score_resolves_swapped_estimates():
    refs, mixture_ref, rng = two_speaker_case(3)
    ests = np.stack([with_snr(refs[1], 25.0, rng),
                     with_snr(refs[0], 25.0, rng)])
    scores = score_utterance("u", refs, ests, mixture_ref)
    assert scores.permutation == (1, 0)
    for s in scores.per_speaker:
        assert abs(s["si_sdr"] - 25.0) < 1e-6


def test_score_identity_system_zero_improvement():
    refs, mixture_ref, _ = two_speaker_case(4)
    ests = np.stack([mixture_ref, mixture_ref])
    scores = score_utterance("u", refs, ests, mixture_ref)
    for s in scores.per_speaker:
        assert abs(s["si_sdri"]) < 1e-9
        assert abs(s["sdri"]) < 1e-9


def test_score_oracle_estimates_positive_improvement():
    refs, mixture_ref, _ = two_speaker_case(5)
    scores = score_utterance("u", refs, refs.copy(), mixture_ref)
    for s in scores.per_speaker:
        assert s["si_sdr"] == 80.0
        assert s["si_sdri"] > 0


def test_score_never_worse_than_identity_assignment():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        refs = rng.standard_normal((3, 500))
        ests = rng.standard_normal((3, 500))
        mixture_ref = refs.sum(axis=0)
        scores = score_utterance("u", refs, ests, mixture_ref)
        chosen = np.mean([s["si_sdr"] for s in scores.per_speaker])
        identity = np.mean([si_sdr_metric(refs[n], ests[n])
                            for n in range(3)])
        assert chosen >= identity - 1e-12


def test_score_shape_mismatch():
    refs, mixture_ref, _ = two_speaker_case(6)
    with pytest.raises(ValueError, match="disagree"):
        score_utterance("u", refs, refs[:, :-1], mixture_ref)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def synthetic_scored(seed, n=20):
    rng = np.random.default_rng(seed)
    utterances = []
    for k in range(n):
        per_speaker = [{m: float(rng.uniform(-5, 20)) for m in METRIC_NAMES}
                       for _ in range(2)]
        utterances.append(UtteranceScores(
            utterance_id=f"u{k:03d}", permutation=(0, 1),
            per_speaker=per_speaker, rt60=float(rng.uniform(0.1, 1.0)),
            angular_difference=float(rng.uniform(0.0, 180.0)),
            overlap_ratio=float(rng.uniform(0.1, 1.0))))
    return utterances


def test_aggregation_matches_independent_recomputation():
    utterances = synthetic_scored(7)
    report = aggregate_scores(utterances)

    # speakers first, then utterances
    for m in METRIC_NAMES:
        expected = sum(
            (u.per_speaker[0][m] + u.per_speaker[1][m]) / 2
            for u in utterances) / len(utterances)
        assert abs(report.overall[m] - expected) < 1e-9

    # independent bucket recomputation for the rt60 panel
    edges = [(0.1, 0.3), (0.3, 0.5), (0.5, 0.7), (0.7, 1.0)]
    for label, count, means in report.buckets["rt60"]:
        lo, hi = next((lo, hi) for lo, hi in edges
                      if f"{lo:g}-{hi:g}" == label)
        members = [u for u in utterances
                   if lo <= u.rt60 < hi or (hi == 1.0 and u.rt60 == 1.0)]
        assert count == len(members)
        for m in METRIC_NAMES:
            expected = sum((u.per_speaker[0][m] + u.per_speaker[1][m]) / 2
                           for u in members) / len(members)
            assert abs(means[m] - expected) < 1e-9

    counted = sum(count for _, count, _ in report.buckets["overlap_ratio"])
    assert counted == len(utterances)


def test_report_files(tmp_path):
    report = aggregate_scores(synthetic_scored(8, n=5), missing=["u_gone"])
    csv_path = os.path.join(str(tmp_path), "report.csv")
    summary_path = os.path.join(str(tmp_path), "summary.txt")
    report.write_csv(csv_path)
    report.write_summary(summary_path)
    with open(csv_path) as f:
        lines = f.read().strip().split("\n")
    assert lines[0].startswith("utterance_id,speaker,")
    assert len(lines) == 1 + 5 * 2
    with open(summary_path) as f:
        summary = f.read()
    assert "by rt60:" in summary
    assert "u_gone" in summary


# ---------------------------------------------------------------------------
# manifest evaluation
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    base = str(tmp_path_factory.mktemp("eval_data"))
    entries = []
    scenes = []
    for k, seed in enumerate((21, 22)):
        scene = generate_scene(seed, duration=0.6, rt60_range=(0.1, 0.2))
        scene_dir = os.path.join(base, f"scene_{k}")
        entries.append(write_scene(scene, scene_dir, f"scene_{k}", base,
                                   seed=seed))
        scenes.append(scene)
    manifest_path = os.path.join(base, "manifest.jsonl")
    write_manifest(manifest_path, entries)
    return base, manifest_path, scenes


def write_estimates(est_dir, scene_id, waveforms, fs=16000):
    os.makedirs(os.path.join(est_dir, scene_id), exist_ok=True)
    for n, wave in enumerate(waveforms):
        write_wav(os.path.join(est_dir, scene_id, f"est_spk{n + 1}.wav"),
                  MultichannelWaveform(data=wave[None, :], sample_rate=fs))


def test_evaluate_manifest_oracle_estimates(small_manifest, tmp_path):
    base, manifest_path, scenes = small_manifest
    est_dir = os.path.join(str(tmp_path), "est")
    for k, scene in enumerate(scenes):
        write_estimates(est_dir, f"scene_{k}",
                        [img.data[0] for img in scene.images])
    report = evaluate_manifest(manifest_path, est_dir)
    assert len(report.utterances) == 2
    assert not report.missing
    # float32 wav round trip keeps estimates essentially equal to references
    for u in report.utterances:
        assert u.mean("si_sdr") > 60.0
        assert u.mean("si_sdri") > 0.0
    assert set(report.buckets) == {"rt60", "angular_difference",
                                   "overlap_ratio"}


def test_evaluate_manifest_missing_outputs(small_manifest, tmp_path):
    base, manifest_path, scenes = small_manifest
    est_dir = os.path.join(str(tmp_path), "est_partial")
    write_estimates(est_dir, "scene_0",
                    [img.data[0] for img in scenes[0].images])
    with pytest.warns(UserWarning, match="missing estimates for scene_1"):
        report = evaluate_manifest(manifest_path, est_dir)
    assert [u.utterance_id for u in report.utterances] == ["scene_0"]
    assert report.missing == ["scene_1"]
