"""Scene generation and dataset manifests.

A scene is one simulated two-speaker mixture: a sampled room scenario, one
impulse-response set, two dry sources spatialized through it, and a partial
temporal overlap. Scenes are written to disk as float32 WAVs plus a JSON-lines
manifest, one object per scene, with paths stored relative to the manifest so
the dataset directory can be moved as a unit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .audio import MultichannelWaveform, read_wav, write_wav
from .room import (MixtureScene, RoomScenario, mix_pair, sample_scenario,
                   simulate_rir, spatialize)
from .synth import surrogate_source


@dataclass
class SceneEntry:
    """One manifest row: file locations plus the scenario it was drawn from."""

    scene_id: str
    mix_path: str
    image_paths: list
    scenario: RoomScenario
    overlap_ratio: float
    seed: int

    def to_json(self) -> str:
        record = {
            "id": self.scene_id,
            "mix_path": self.mix_path,
            "image_paths": list(self.image_paths),
            "scenario": {
                "dims": list(self.scenario.room_dims),
                "rt60": self.scenario.rt60,
                "mic_positions": self.scenario.mic_positions.tolist(),
                "speaker_positions": self.scenario.speaker_positions.tolist(),
                "angular_difference": self.scenario.angular_difference,
                "overlap_ratio": self.overlap_ratio,
            },
            "seed": self.seed,
        }
        return json.dumps(record)

    @staticmethod
    def from_json(line: str) -> "SceneEntry":
        record = json.loads(line)
        scn = record["scenario"]
        scenario = RoomScenario(
            room_dims=tuple(scn["dims"]),
            rt60=float(scn["rt60"]),
            mic_positions=np.asarray(scn["mic_positions"], dtype=np.float64),
            speaker_positions=np.asarray(scn["speaker_positions"],
                                         dtype=np.float64),
            angular_difference=float(scn["angular_difference"]),
        )
        return SceneEntry(
            scene_id=record["id"],
            mix_path=record["mix_path"],
            image_paths=list(record["image_paths"]),
            scenario=scenario,
            overlap_ratio=float(scn["overlap_ratio"]),
            seed=int(record["seed"]),
        )


def generate_scene(seed, duration: float = 4.0, fs: int = 16000,
                   rt60_range=(0.1, 1.0), dry_sources=None) -> MixtureScene:
    """Simulates one two-speaker scene, fully determined by the seed.

    Args:
      seed: scene seed; sub-streams (scenario, sources, overlap) are derived
        from it so scenes with different seeds are independent.
      duration: mixture length in seconds.
      fs: sample rate in Hz.
      rt60_range: reverberation-time range passed to the scenario sampler.
      dry_sources: optional pair of single-channel MultichannelWaveform dry
        signals; surrogate sources are synthesized when omitted.

    Returns:
      MixtureScene with an (8, duration*fs) mixture and per-speaker images.
    """
    scenario = sample_scenario([seed, 0], n_speakers=2, rt60_range=rt60_range)
    rng = np.random.default_rng([seed, 1])
    if dry_sources is None:
        dry_sources = [surrogate_source([seed, 2 + i], duration, fs)
                       for i in range(2)]
    if len(dry_sources) != 2:
        raise ValueError("expected exactly two dry sources")

    rirs = simulate_rir(scenario, fs=fs)
    images = [spatialize(dry_sources[i], rirs.rirs[i]) for i in range(2)]

    overlap_ratio = rng.uniform(0.1, 1.0)
    if rng.integers(0, 2) == 1:  # fair coin: which speaker leads
        images = images[::-1]
    target_len = int(round(duration * fs))
    return mix_pair(images[0], images[1], overlap_ratio, target_len,
                    scenario=scenario)


def write_scene(scene: MixtureScene, out_dir: str, scene_id: str,
                manifest_dir: str, seed: int) -> SceneEntry:
    """Writes one scene's WAVs under out_dir and returns its manifest entry."""
    os.makedirs(out_dir, exist_ok=True)
    mix_path = os.path.join(out_dir, "mix.wav")
    write_wav(mix_path, scene.mixture)
    image_paths = []
    for i, image in enumerate(scene.images):
        path = os.path.join(out_dir, "spk%d.wav" % (i + 1))
        write_wav(path, image)
        image_paths.append(os.path.relpath(path, manifest_dir))
    return SceneEntry(
        scene_id=scene_id,
        mix_path=os.path.relpath(mix_path, manifest_dir),
        image_paths=image_paths,
        scenario=scene.scenario,
        overlap_ratio=scene.overlap_ratio,
        seed=seed,
    )


def write_manifest(path: str, entries) -> None:
    ids = [entry.scene_id for entry in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate scene ids in manifest")
    with open(path, "w") as f:
        for entry in entries:
            f.write(entry.to_json() + "\n")


def read_manifest(path: str):
    entries = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(SceneEntry.from_json(line))
    ids = [entry.scene_id for entry in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate scene ids in manifest")
    return entries


def load_scene(entry: SceneEntry, manifest_dir: str):
    """Loads (mixture, images) for a manifest entry; paths are manifest-relative."""
    mixture = read_wav(os.path.join(manifest_dir, entry.mix_path))
    images = [read_wav(os.path.join(manifest_dir, path))
              for path in entry.image_paths]
    return mixture, images
