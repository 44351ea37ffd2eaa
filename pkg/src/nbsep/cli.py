"""Command-line entry point: simulate, train, separate, eval.

Exit codes: 0 on success, 1 on user errors (bad arguments, missing or
malformed files), 2 on internal errors.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import sys
import traceback

import numpy as np

from .audio import MultichannelWaveform, read_wav, write_wav
from .baselines import oracle_mvdr
from .config import Config, load_config
from .dataset import generate_scene, load_scene, read_manifest, write_manifest, write_scene
from .inference import separate_mixture
from .metrics import evaluate_manifest
from .model import init_params, load_model
from .training import examples_from_manifest, train

USER_ERROR = 1
INTERNAL_ERROR = 2

log = logging.getLogger("nbsep")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; those are user errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USER_ERROR, f"{self.prog}: error: {message}\n")


def _get_config(args) -> Config:
    config = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "ref_channel", None) is not None:
        config.ref_channel = args.ref_channel
    return config


def _load_corpus(source_dir):
    if not source_dir or not os.path.isdir(source_dir):
        raise ValueError(f"unreadable source corpus: {source_dir!r} "
                         "(pass --source-dir or use --synthetic)")
    paths = sorted(glob.glob(os.path.join(source_dir, "*.wav")))
    if len(paths) < 2:
        raise ValueError(f"source corpus {source_dir!r} needs at least two "
                         "WAV files")
    return paths


def _corpus_pair(paths, rng, duration, fs):
    n_samples = int(round(duration * fs))
    picks = rng.choice(len(paths), size=2, replace=False)
    sources = []
    for idx in picks:
        wav = read_wav(paths[idx])
        if wav.sample_rate != fs:
            raise ValueError(f"{paths[idx]}: sample rate {wav.sample_rate}, "
                             f"expected {fs}")
        x = wav.data[0][:n_samples]
        if x.shape[0] < n_samples:
            x = np.pad(x, (0, n_samples - x.shape[0]))
        rms = np.sqrt(np.mean(x ** 2))
        if rms == 0:
            raise ValueError(f"{paths[idx]}: silent source file")
        sources.append(MultichannelWaveform(data=(x / rms)[None, :],
                                            sample_rate=fs))
    return sources


def cmd_simulate(args) -> int:
    config = _get_config(args)
    n_scenes = args.n_scenes
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    corpus = None if args.synthetic else _load_corpus(args.source_dir)

    entries = []
    for k in range(n_scenes):
        scene_id = f"scene_{k:04d}"
        dry = None
        scene = None
        for attempt in range(10):
            # scene seeds are disjoint per (run seed, index, attempt)
            scene_seed = (config.seed * 100000 + k) + 50000000 * attempt
            if corpus is not None:
                rng = np.random.default_rng([scene_seed, 17])
                dry = _corpus_pair(corpus, rng, config.duration,
                                   config.sample_rate)
            try:
                scene = generate_scene(
                    scene_seed, duration=config.duration,
                    fs=config.sample_rate,
                    rt60_range=(config.rt60_min, config.rt60_max),
                    dry_sources=dry)
                break
            except ValueError as exc:
                if "rt60" not in str(exc):
                    raise
                log.warning("scene %s attempt %d: %s; resampling",
                            scene_id, attempt, exc)
        if scene is None:
            raise ValueError(f"could not simulate {scene_id} after retries")
        entries.append(write_scene(scene, os.path.join(out_dir, scene_id),
                                   scene_id, out_dir, seed=scene_seed))
        log.info("wrote %s (rt60 %.2f s, overlap %.2f)", scene_id,
                 scene.scenario.rt60, scene.overlap_ratio)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    write_manifest(manifest_path, entries)
    print(f"wrote {n_scenes} scenes and {manifest_path}")
    return 0


def cmd_train(args) -> int:
    config = _get_config(args)
    train_set = examples_from_manifest(args.train_manifest,
                                       ref_channel=config.ref_channel)
    val_set = (examples_from_manifest(args.val_manifest,
                                      ref_channel=config.ref_channel)
               if args.val_manifest else None)
    params = init_params(config.model_config(), seed=config.seed,
                         dtype=np.float32)
    state = train(params, train_set, val_set, config.train_config(),
                  args.out, stft_cfg=config.stft_config(),
                  ref_channel=config.ref_channel, resume_from=args.resume)
    print(f"trained {state.epoch} epochs ({state.step} steps); "
          f"checkpoints in {args.out}")
    return 0


def _write_estimates(estimates, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for n, wav in enumerate(estimates):
        path = os.path.join(out_dir, f"est_spk{n + 1}.wav")
        write_wav(path, wav)
        paths.append(path)
    return paths


def cmd_separate(args) -> int:
    config = _get_config(args)
    params, _ = load_model(args.checkpoint)
    stft_cfg = config.stft_config()
    if args.input.endswith(".jsonl"):
        entries = read_manifest(args.input)
        base = os.path.dirname(os.path.abspath(args.input))
        for entry in entries:
            mixture, _ = load_scene(entry, base)
            estimates = separate_mixture(params, mixture, stft_cfg,
                                         ref_channel=config.ref_channel)
            _write_estimates(estimates,
                             os.path.join(args.out, entry.scene_id))
            log.info("separated %s", entry.scene_id)
        print(f"separated {len(entries)} mixtures into {args.out}")
    else:
        mixture = read_wav(args.input)
        estimates = separate_mixture(params, mixture, stft_cfg,
                                     ref_channel=config.ref_channel)
        paths = _write_estimates(estimates, args.out)
        print("wrote " + ", ".join(paths))
    return 0


def _eval_estimates(args, config, entries, base, est_dir) -> None:
    """Runs the chosen system over the manifest, writing estimate WAVs."""
    params = None
    if args.system in ("nbss", "nbss-corr"):
        if not args.checkpoint:
            raise ValueError(f"--checkpoint is required for --system "
                             f"{args.system}")
        params, _ = load_model(args.checkpoint)
    stft_cfg = config.stft_config()
    for entry in entries:
        mixture, images = load_scene(entry, base)
        if args.system == "mvdr":
            estimates = []
            for n, image in enumerate(images):
                undesired = MultichannelWaveform(
                    data=mixture.data - image.data,
                    sample_rate=mixture.sample_rate)
                result = oracle_mvdr(mixture, image, undesired,
                                     ref_channel=config.ref_channel,
                                     stft_cfg=stft_cfg)
                estimates.append(result.waveform)
        else:
            estimates = separate_mixture(
                params, mixture, stft_cfg, ref_channel=config.ref_channel,
                correlation_align=(args.system == "nbss-corr"))
        _write_estimates(estimates, os.path.join(est_dir, entry.scene_id))
        log.info("evaluated %s with %s", entry.scene_id, args.system)


def cmd_eval(args) -> int:
    config = _get_config(args)
    entries = read_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    est_dir = args.est_dir or os.path.join(args.out, "estimates")
    os.makedirs(args.out, exist_ok=True)
    if not args.score_only:
        _eval_estimates(args, config, entries, base, est_dir)
    report = evaluate_manifest(args.manifest, est_dir,
                               ref_channel=config.ref_channel)
    report.write_csv(os.path.join(args.out, "report.csv"))
    report.write_summary(os.path.join(args.out, "summary.txt"))
    print(f"scored {len(report.utterances)} utterances "
          f"({len(report.missing)} missing); "
          f"mean SI-SDRi {report.overall['si_sdri']:.2f} dB; "
          f"reports in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nbsep",
                     description="narrow-band multichannel speech separation")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate reverberant 2-speaker "
                         "scenes and write a manifest")
    sim.add_argument("--config", help="key=value config file")
    sim.add_argument("--out", required=True, help="output dataset directory")
    sim.add_argument("--n-scenes", type=int, required=True)
    sim.add_argument("--seed", type=int, help="overrides config seed")
    sim.add_argument("--synthetic", action="store_true",
                     help="use synthetic surrogate sources")
    sim.add_argument("--source-dir",
                     help="directory of dry source WAVs (16 kHz)")
    sim.set_defaults(func=cmd_simulate)

    tr = sub.add_parser("train", help="train the separator on a manifest")
    tr.add_argument("--config")
    tr.add_argument("--train-manifest", required=True)
    tr.add_argument("--val-manifest")
    tr.add_argument("--out", required=True, help="run directory for "
                    "checkpoints and log.csv")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.set_defaults(func=cmd_train)

    sep = sub.add_parser("separate", help="separate a mixture WAV or every "
                         "mixture in a manifest")
    sep.add_argument("input", help="multichannel mixture .wav or "
                     "manifest .jsonl")
    sep.add_argument("--checkpoint", required=True)
    sep.add_argument("--out", required=True)
    sep.add_argument("--config")
    sep.add_argument("--ref-channel", type=int)
    sep.set_defaults(func=cmd_separate)

    ev = sub.add_parser("eval", help="run a system over a manifest and "
                        "write report.csv / summary.txt")
    ev.add_argument("--system", required=True,
                    choices=["mvdr", "nbss", "nbss-corr"])
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--out", required=True, help="report directory")
    ev.add_argument("--est-dir", help="where estimate WAVs go "
                    "(default <out>/estimates)")
    ev.add_argument("--checkpoint", help="separator checkpoint "
                    "(nbss/nbss-corr)")
    ev.add_argument("--score-only", action="store_true",
                    help="score existing estimates instead of running "
                    "the system")
    ev.add_argument("--config")
    ev.add_argument("--ref-channel", type=int)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    except Exception:  # pragma: no cover - safety net
        traceback.print_exc()
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
