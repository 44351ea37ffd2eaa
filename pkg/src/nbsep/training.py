"""Training loop: Adam, global gradient clipping, halving-on-plateau lr.

One training utterance is a multichannel mixture plus its reference-channel
target images. Every frequency of an utterance travels through the shared
network together; a batch averages the permutation-invariant loss gradient
over several utterances before one optimizer step.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .audio import MultichannelWaveform
from .dataset import load_scene, read_manifest
from .features import pack_input, unpack_output
from .loss import assemble_fullband, fpit, fpit_grad
from .model import ModelParams, backward, forward, load_model, save_model
from .stft import StftConfig, stft


@dataclass
class TrainConfig:
    """Optimizer and schedule settings."""

    lr_init: float = 1e-3
    lr_min: float = 1e-4
    lr_halving: float = 0.5
    plateau_epochs: int = 10
    clip_threshold: float = 5.0
    utterances_per_batch: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    seed: int = 0


@dataclass
class TrainState:
    """Everything needed to continue training exactly where it stopped."""

    params: ModelParams
    m: "OrderedDict[str, np.ndarray]"
    v: "OrderedDict[str, np.ndarray]"
    step: int = 0
    epoch: int = 0
    lr: float = 1e-3
    best_val_loss: float = np.inf
    epochs_since_improvement: int = 0


@dataclass
class TrainingExample:
    """A mixture and its per-speaker reference-channel images."""

    mixture: MultichannelWaveform
    targets: np.ndarray  # (n_speakers, n_samples)


def init_train_state(params: ModelParams, lr: float) -> TrainState:
    zeros = OrderedDict((name, np.zeros_like(params[name]))
                        for name in params.names)
    m = zeros
    v = OrderedDict((name, np.zeros_like(params[name]))
                    for name in params.names)
    return TrainState(params=params.copy(), m=m, v=v, lr=float(lr))


def global_grad_norm(grads) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(np.asarray(g, dtype=np.float64))))
    return float(np.sqrt(total))


def clip_gradients(grads, threshold: float = 5.0):
    """Scales all gradients by a common factor so the global l2 norm is
    at most `threshold`; gradients within the threshold pass unchanged."""
    norm = global_grad_norm(grads)
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return OrderedDict((name, g * g.dtype.type(scale))
                       for name, g in grads.items())


def adam_step(state: TrainState, grads, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> TrainState:
    """One Adam update with bias correction; returns a new state.

    Raises before touching any state if a gradient is missing, misshapen,
    or non-finite.
    """
    params = state.params
    for name in params.names:
        if name not in grads:
            raise ValueError(f"missing gradient for {name}")
        g = np.asarray(grads[name])
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, "
                             f"expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name}")

    t = state.step + 1
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    new_arrays = OrderedDict()
    new_m = OrderedDict()
    new_v = OrderedDict()
    for name in params.names:
        g = np.asarray(grads[name])
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = (lr / bias1) * m / (np.sqrt(v / bias2) + eps)
        new_arrays[name] = params[name] - update.astype(params.dtype)
        new_m[name] = m
        new_v[name] = v
    new_params = ModelParams(config=params.config, arrays=new_arrays)
    return replace(state, params=new_params, m=new_m, v=new_v, step=t)


def lr_schedule_update(state: TrainState, val_loss: float,
                       lr_min: float = 1e-4, halving: float = 0.5,
                       plateau_epochs: int = 10) -> TrainState:
    """Halve the learning rate after `plateau_epochs` epochs without a strict
    improvement of the best validation loss, never dropping below lr_min.
    Both a halving and an improvement reset the stagnation counter."""
    if val_loss < state.best_val_loss:
        return replace(state, best_val_loss=float(val_loss),
                       epochs_since_improvement=0)
    since = state.epochs_since_improvement + 1
    if since >= plateau_epochs:
        return replace(state, lr=max(state.lr * halving, lr_min),
                       epochs_since_improvement=0)
    return replace(state, epochs_since_improvement=since)


def utterance_loss(params: ModelParams, example: TrainingExample,
                   stft_cfg: StftConfig, ref_channel: int = 0,
                   compute_grads: bool = False):
    """Full separation loss for one utterance: STFT, per-frequency network,
    full-band reassembly, permutation-invariant SI-SDR.

    Returns:
        (loss, grads) where grads is a per-parameter dict (None unless
        compute_grads).
    """
    n_channels = example.mixture.n_channels
    if params.config.n_input != 2 * n_channels:
        raise ValueError(f"model expects {params.config.n_input // 2} input "
                         f"channels, mixture has {n_channels}")
    spec = stft(example.mixture, stft_cfg)
    batch = pack_input(spec, ref_channel=ref_channel, dtype=params.dtype)
    outputs, trace = forward(params, batch.inputs, collect_trace=compute_grads)
    per_freq = unpack_output(np.asarray(outputs, dtype=np.float64), 1.0)
    est = assemble_fullband(per_freq, batch.scales, stft_cfg,
                            example.targets.shape[1])
    result = fpit(est, example.targets)
    if not compute_grads:
        return result.loss, None
    grad_out = fpit_grad(est, example.targets, result, batch.scales)
    grads, _ = backward(params, trace, grad_out.astype(params.dtype))
    return result.loss, grads


def save_train_state(path, state: TrainState) -> None:
    extra = OrderedDict()
    for name in state.params.names:
        extra[f"opt_m/{name}"] = state.m[name]
    for name in state.params.names:
        extra[f"opt_v/{name}"] = state.v[name]
    extra["train/step"] = np.array(state.step, dtype=np.int64)
    extra["train/epoch"] = np.array(state.epoch, dtype=np.int64)
    extra["train/lr"] = np.array(state.lr, dtype=np.float64)
    extra["train/best_val_loss"] = np.array(state.best_val_loss,
                                            dtype=np.float64)
    extra["train/epochs_since_improvement"] = np.array(
        state.epochs_since_improvement, dtype=np.int64)
    save_model(path, state.params, extra)


def load_train_state(path) -> TrainState:
    params, extra = load_model(path)
    try:
        m = OrderedDict((name, extra[f"opt_m/{name}"]) for name in params.names)
        v = OrderedDict((name, extra[f"opt_v/{name}"]) for name in params.names)
        return TrainState(
            params=params, m=m, v=v,
            step=int(extra["train/step"]),
            epoch=int(extra["train/epoch"]),
            lr=float(extra["train/lr"]),
            best_val_loss=float(extra["train/best_val_loss"]),
            epochs_since_improvement=int(
                extra["train/epochs_since_improvement"]),
        )
    except KeyError as exc:
        raise ValueError(f"checkpoint has no training state ({exc})") from exc


def examples_from_manifest(manifest_path, ref_channel: int = 0):
    """Loads every scene of a manifest into in-memory training examples."""
    entries = read_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    examples = []
    for entry in entries:
        mixture, images = load_scene(entry, base)
        targets = np.stack([img.data[ref_channel] for img in images])
        examples.append(TrainingExample(mixture=mixture, targets=targets))
    return examples


def train(params: ModelParams, train_set, val_set, config: TrainConfig,
          out_dir, stft_cfg: StftConfig = None, ref_channel: int = 0,
          resume_from=None, early_stop_loss: float = None) -> TrainState:
    """Runs the optimization loop and logs per-epoch progress.

    Writes `log.csv` (epoch,train_loss,val_loss,lr — the rate after the
    end-of-epoch schedule update) and one full `epoch_{k}.ckpt` per epoch,
    from which training can resume bit-identically.

    Args:
        params: initial parameters (ignored when resume_from is given).
        train_set: list of TrainingExample (must be non-empty).
        val_set: examples for the schedule/validation loss; falls back to
            the training set when empty or None.
        config: optimizer and schedule settings.
        out_dir: directory for logs and checkpoints.
        stft_cfg: analysis parameters (defaults match the separator).
        ref_channel: reference microphone for input normalization.
        resume_from: checkpoint path to continue from.
        early_stop_loss: optional train-loss target that ends training early.

    Returns:
        the final TrainState.
    """
    if not train_set:
        raise ValueError("empty training set")
    if stft_cfg is None:
        stft_cfg = StftConfig()
    val = val_set if val_set else train_set
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "log.csv")

    if resume_from is not None:
        state = load_train_state(resume_from)
        log_file = open(log_path, "a")
    else:
        state = init_train_state(params, config.lr_init)
        log_file = open(log_path, "w")
        log_file.write("epoch,train_loss,val_loss,lr\n")

    try:
        for epoch in range(state.epoch, config.max_epochs):
            order = np.random.default_rng(
                [config.seed, epoch]).permutation(len(train_set))
            epoch_losses = []
            for start in range(0, len(order), config.utterances_per_batch):
                batch_idx = order[start:start + config.utterances_per_batch]
                acc = None
                for i in batch_idx:
                    loss, grads = utterance_loss(
                        state.params, train_set[i], stft_cfg,
                        ref_channel=ref_channel, compute_grads=True)
                    epoch_losses.append(loss)
                    if acc is None:
                        acc = OrderedDict(grads)
                    else:
                        for name in acc:
                            acc[name] = acc[name] + grads[name]
                inv = 1.0 / len(batch_idx)
                for name in acc:
                    acc[name] = acc[name] * acc[name].dtype.type(inv)
                acc = clip_gradients(acc, config.clip_threshold)
                state = adam_step(state, acc, state.lr, config.adam_beta1,
                                  config.adam_beta2, config.adam_eps)

            train_loss = float(np.mean(epoch_losses))
            val_loss = float(np.mean([
                utterance_loss(state.params, ex, stft_cfg,
                               ref_channel=ref_channel)[0] for ex in val]))
            state = replace(state, epoch=epoch + 1)
            state = lr_schedule_update(state, val_loss, config.lr_min,
                                       config.lr_halving,
                                       config.plateau_epochs)
            log_file.write(f"{epoch},{train_loss!r},{val_loss!r},"
                           f"{state.lr!r}\n")
            log_file.flush()
            save_train_state(os.path.join(out_dir, f"epoch_{epoch}.ckpt"),
                             state)
            if early_stop_loss is not None and train_loss <= early_stop_loss:
                break
    finally:
        log_file.close()
    return state
