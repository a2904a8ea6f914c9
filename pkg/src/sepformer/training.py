"""Optimization loop: Adam with bias correction, global gradient-norm
clipping, plateau-based learning-rate halving driven by validation SI-SNRi,
best-checkpoint tracking, and a CSV metrics log.

One utterance per step (batch size 1); each step records one graph, runs
backward, clips, and applies Adam.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import MixtureSample, SourceBank, dynamic_mix, make_mixture
from .errors import TrainingDivergedError, UsageError
from .losses import pit_loss, si_snr
from .model import SepFormerModel, save_checkpoint
from .tensor import Tensor

METRICS_HEADER = ["epoch", "step", "train_loss", "val_si_snri_db", "lr", "wall_clock_s"]

# seed-space namespaces keep training, validation, and dynamic-mixing draws disjoint
_NS_TRAIN, _NS_VAL, _NS_DM = 1, 2, 3


@dataclass
class TrainState:
    """Optimizer and schedule state carried across epochs."""

    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    adam_t: int = 0
    moments: dict = field(default_factory=dict)  # name -> (m, v) arrays
    best_val_si_snri: float = -np.inf
    epochs_since_improvement: int = 0
    last_grad_norm: float = 0.0


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm.

    Returns the applied scale (1.0 when no clipping was needed).
    """
    norm = T.global_norm([p.grad for p in params if p.grad is not None])
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= scale
    return scale


def adam_step(
    named_params: Sequence[tuple[str, Tensor]],
    state: TrainState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, in place; missing grads count as zero."""
    state.adam_t += 1
    t = state.adam_t
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


def lr_schedule_step(state: TrainState, val_si_snri: float, config: TrainConfig) -> float:
    """Plateau halving: once past the anneal start epoch, halve the rate after
    ``plateau_patience`` successive epochs without a strictly better
    validation SI-SNRi. Returns the learning rate for the next epoch."""
    if val_si_snri > state.best_val_si_snri:
        state.best_val_si_snri = val_si_snri
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
    if (
        state.epoch >= config.anneal_start_epoch
        and state.epochs_since_improvement >= config.plateau_patience
    ):
        state.lr *= config.lr_factor
        state.epochs_since_improvement = 0
    return state.lr


# ---------------------------------------------------------------------------
# Data feeds
# ---------------------------------------------------------------------------


class FixedMixtures:
    """Same list of pre-built mixtures every epoch."""

    def __init__(self, samples: Sequence[MixtureSample]):
        if not samples:
            raise UsageError("FixedMixtures needs at least one sample")
        self.samples = list(samples)

    def epoch_samples(self, epoch: int) -> list[MixtureSample]:
        return self.samples


class DynamicMixtures:
    """Fresh speed-perturbed mixtures every epoch, seeded per (epoch, index)."""

    def __init__(self, bank: SourceBank, n_sources: int, per_epoch: int, base_seed: int):
        self.bank = bank
        self.n_sources = n_sources
        self.per_epoch = per_epoch
        self.base_seed = base_seed

    def epoch_samples(self, epoch: int) -> list[MixtureSample]:
        out = []
        for i in range(self.per_epoch):
            rng = np.random.default_rng((_NS_DM, self.base_seed, epoch, i))
            out.append(dynamic_mix(self.bank, self.n_sources, rng))
        return out


def validation_set(bank: SourceBank, n_sources: int, count: int, seed: int) -> list[MixtureSample]:
    """Fixed seeded mixtures, disjoint in seed space from training draws."""
    out = []
    for i in range(count):
        rng = np.random.default_rng((_NS_VAL, seed, i))
        picks = rng.choice(len(bank), size=n_sources, replace=False)
        out.append(make_mixture([bank.signals[j] for j in picks], rng))
    return out


def fixed_training_set(bank: SourceBank, n_sources: int, count: int, seed: int) -> list[MixtureSample]:
    """Pre-mixed training samples for the no-dynamic-mixing mode."""
    out = []
    for i in range(count):
        rng = np.random.default_rng((_NS_TRAIN, seed, i))
        picks = rng.choice(len(bank), size=n_sources, replace=False)
        out.append(make_mixture([bank.signals[j] for j in picks], rng))
    return out


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_si_snri(model: SepFormerModel, samples: Sequence[MixtureSample]) -> float:
    """Mean PIT-aligned SI-SNR improvement over a sample set, in dB."""
    return float(np.mean([sample_si_snri(model, s) for s in samples]))


def sample_si_snri(model: SepFormerModel, sample: MixtureSample) -> float:
    """PIT-aligned SI-SNRi for one mixture (mean over sources)."""
    with T.no_grad():
        ests = model.separate(Tensor(sample.mixture.samples))
        result = pit_loss([e for e in ests], [s.samples for s in sample.sources])
        gains = []
        for i, perm_target in enumerate(result.best_perm):
            ref = sample.sources[perm_target].samples
            mix_score = si_snr(sample.mixture.samples, ref).item()
            gains.append(result.per_source_si_snr[i] - mix_score)
        return float(np.mean(gains))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

TrainData = Union[FixedMixtures, DynamicMixtures, Sequence[MixtureSample]]


def train(
    model: SepFormerModel,
    train_data: TrainData,
    val_data: Sequence[MixtureSample],
    config: TrainConfig,
    out_dir: Optional[Path] = None,
    clock: Callable[[], float] = time.perf_counter,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainState:
    """Run the full recipe and return the final state.

    When ``out_dir`` is given, writes ``metrics.csv`` (one row per epoch) and
    ``best.ckpt`` (the highest-validation model). ``clock`` exists so
    reproducibility tests can inject a deterministic time source.
    """
    if not hasattr(train_data, "epoch_samples"):
        train_data = FixedMixtures(train_data)
    state = TrainState(lr=config.lr)
    named = list(model.named_parameters())
    params = [p for _, p in named]

    writer = None
    csv_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_file = open(out_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(METRICS_HEADER)

    start = clock()
    try:
        for epoch in range(1, config.max_epochs + 1):
            state.epoch = epoch
            epoch_losses = []
            lr_used = state.lr
            for sample in train_data.epoch_samples(epoch):
                mixture = sample.mixture.samples
                sources = [s.samples for s in sample.sources]
                if config.max_signal_len is not None:
                    mixture = mixture[: config.max_signal_len]
                    sources = [s[: config.max_signal_len] for s in sources]
                state.step += 1
                model.zero_grads()
                ests = model.separate(Tensor(mixture))
                result = pit_loss(ests, sources)
                loss_value = result.loss.item()
                if not np.isfinite(loss_value):
                    raise TrainingDivergedError(
                        f"non-finite loss at step {state.step} "
                        f"(lr={state.lr:g}, last_grad_norm={state.last_grad_norm:g})"
                    )
                T.backward(result.loss)
                state.last_grad_norm = T.global_norm(
                    [p.grad for p in params if p.grad is not None]
                )
                clip_gradients(params, config.grad_clip_norm)
                adam_step(named, state, state.lr, config.beta1, config.beta2, config.adam_eps)
                epoch_losses.append(loss_value)

            val_score = evaluate_si_snri(model, val_data)
            improved = val_score > state.best_val_si_snri
            lr_schedule_step(state, val_score, config)
            if improved and out_dir is not None:
                save_checkpoint(model, out_dir / "best.ckpt")
            if writer is not None:
                writer.writerow(
                    [
                        epoch,
                        state.step,
                        f"{np.mean(epoch_losses):.6f}",
                        f"{val_score:.6f}",
                        f"{lr_used:.10g}",
                        f"{clock() - start:.3f}",
                    ]
                )
                csv_file.flush()
            if progress is not None:
                progress(
                    f"epoch {epoch}: loss {np.mean(epoch_losses):+.3f} "
                    f"val_si_snri {val_score:+.3f} dB lr {lr_used:g}"
                )
    finally:
        if csv_file is not None:
            csv_file.close()
    return state
