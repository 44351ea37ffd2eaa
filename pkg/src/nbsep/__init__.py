"""Narrow-band multichannel speech separation toolkit.

Pipeline: simulate reverberant two-speaker mixtures (image-method room
acoustics), train a frequency-shared BiLSTM separator with a full-band
permutation-invariant SI-SDR criterion, and evaluate against an oracle MVDR
beamformer and a correlation-based frequency alignment baseline.
"""

__version__ = "0.1.0"

from .audio import MultichannelWaveform, read_wav, write_wav
from .baselines import (FrequencyPermutationMap, MvdrResult,
                        align_permutations_correlation, oracle_mvdr,
                        per_frequency_pit)
from .config import Config, load_config, save_config
from .dataset import (SceneEntry, generate_scene, load_scene, read_manifest,
                      write_manifest, write_scene)
from .features import NarrowbandBatch, pack_input, unpack_output
from .inference import separate_mixture
from .loss import (FpitResult, FullbandEstimate, assemble_fullband, fpit,
                   fpit_grad, si_sdr_loss)
from .metrics import (EvalReport, aggregate_scores, evaluate_manifest,
                      score_utterance, sdr_metric, si_sdr_metric)
from .model import (ModelConfig, ModelParams, backward, forward, init_params,
                    load_checkpoint, load_model, save_checkpoint, save_model)
from .room import (MixtureScene, RirSet, RoomScenario, estimate_t60,
                   first_arrival_sample, mix_pair, sample_scenario,
                   simulate_rir, spatialize)
from .stft import ComplexSpectrogram, StftConfig, istft, stft
from .synth import surrogate_source
from .training import (TrainConfig, TrainState, TrainingExample, adam_step,
                       clip_gradients, lr_schedule_update, train,
                       utterance_loss)

__all__ = [
    "MultichannelWaveform", "read_wav", "write_wav",
    "FrequencyPermutationMap", "MvdrResult",
    "align_permutations_correlation", "oracle_mvdr", "per_frequency_pit",
    "Config", "load_config", "save_config",
    "SceneEntry", "generate_scene", "load_scene", "read_manifest",
    "write_manifest", "write_scene",
    "NarrowbandBatch", "pack_input", "unpack_output",
    "separate_mixture",
    "FpitResult", "FullbandEstimate", "assemble_fullband", "fpit",
    "fpit_grad", "si_sdr_loss",
    "EvalReport", "aggregate_scores", "evaluate_manifest", "score_utterance",
    "sdr_metric", "si_sdr_metric",
    "ModelConfig", "ModelParams", "backward", "forward", "init_params",
    "load_checkpoint", "load_model", "save_checkpoint", "save_model",
    "MixtureScene", "RirSet", "RoomScenario", "estimate_t60",
    "first_arrival_sample", "mix_pair", "sample_scenario", "simulate_rir",
    "spatialize",
    "ComplexSpectrogram", "StftConfig", "istft", "stft",
    "surrogate_source",
    "TrainConfig", "TrainState", "TrainingExample", "adam_step",
    "clip_gradients", "lr_schedule_update", "train", "utterance_loss",
]
