"""Teacher-forced training: batching, token accuracy, epoch loop.

Loss is masked label-smoothed cross-entropy over the shifted targets;
PAD positions are excluded from both the loss and the accuracy so the
numbers track only tokens the decoder is actually asked to produce.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datagen import CorpusSplit, TabularDataset
from .expr_core import PAD_ID, SOS_ID, VOCAB
from .model import Model
from .tensor_nn import (
    ScheduleConfig,
    adam_step,
    cross_entropy_label_smoothed,
    no_grad,
    noam_lr,
    reshape,
    save_checkpoint,
)

ALLOWED_SMOOTHING = (0.0, 0.1)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    label_smoothing: float = 0.0
    seed: int = 0
    warmup_steps: int = 4000
    lr_scale: float = 1.0
    checkpoint_every: int = 0  # extra checkpoint every k epochs; 0 = final only

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.label_smoothing not in ALLOWED_SMOOTHING:
            raise ValueError(f"label_smoothing must be one of {ALLOWED_SMOOTHING}")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def make_batch(
    datasets: Sequence[TabularDataset], max_len: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack datasets into training arrays.

    Returns (encoder input (B, n, 7) f32, decoder input (B, M) ids,
    targets (B, M-1) ids, pad mask (B, M-1) bool).  Decoder input is
    [SOS, t1..tk, PAD...]; targets are the same sequence shifted left.
    """
    if not datasets:
        raise ValueError("empty batch")
    batch = len(datasets)
    enc = np.stack([d.matrix for d in datasets]).astype(np.float32)
    dec = np.full((batch, max_len), PAD_ID, dtype=np.int64)
    dec[:, 0] = SOS_ID
    for i, d in enumerate(datasets):
        ids = [VOCAB.id_of(t) for t in d.ground_truth]
        if len(ids) > max_len - 1:
            raise ValueError(
                f"ground truth of {len(ids)} tokens exceeds capacity {max_len - 1}"
            )
        dec[i, 1 : 1 + len(ids)] = ids
    targets = dec[:, 1:].copy()
    pad_mask = targets == PAD_ID
    return enc, dec, targets, pad_mask


def token_accuracy(
    logits: np.ndarray, targets: np.ndarray, pad_mask: np.ndarray
) -> float:
    """Fraction of unmasked positions whose argmax matches the target."""
    keep = ~np.asarray(pad_mask)
    if not keep.any():
        raise ValueError("all target positions are masked")
    predicted = np.asarray(logits).argmax(axis=-1)
    return float((predicted[keep] == np.asarray(targets)[keep]).mean())


def _batch_loss(model: Model, datasets, epsilon, training, rng):
    """Forward pass -> (loss tensor, accuracy, kept-position count)."""
    enc, dec, targets, pad_mask = make_batch(datasets, model.cfg.max_len)
    memory = model.encode(enc, training=training, rng=rng)
    logits = model.decode(memory, dec, training=training, rng=rng)
    used = logits[:, : model.cfg.max_len - 1]
    flat = reshape(used, (-1, model.cfg.vocab_size))
    loss = cross_entropy_label_smoothed(
        flat, targets.reshape(-1), pad_mask.reshape(-1), epsilon
    )
    accuracy = token_accuracy(used.data, targets, pad_mask)
    return loss, accuracy, int((~pad_mask).sum())


def evaluate_split(
    model: Model,
    datasets: Sequence[TabularDataset],
    batch_size: int,
    epsilon: float,
) -> tuple[float, float]:
    """Mean loss and accuracy with dropout disabled, weighted by token count."""
    loss_sum = acc_sum = kept_sum = 0
    with no_grad():
        for start in range(0, len(datasets), batch_size):
            chunk = datasets[start : start + batch_size]
            loss, accuracy, kept = _batch_loss(
                model, chunk, epsilon, training=False, rng=None
            )
            loss_sum += float(loss.data) * kept
            acc_sum += accuracy * kept
            kept_sum += kept
    return loss_sum / kept_sum, acc_sum / kept_sum


def write_metrics_csv(records: Sequence[MetricsRecord], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "split", "loss", "accuracy"])
        for r in records:
            writer.writerow([r.epoch, r.split, f"{r.loss:.6f}", f"{r.accuracy:.6f}"])


def train(
    model: Model,
    corpus: CorpusSplit,
    cfg: TrainConfig,
    out_dir: Optional[Path] = None,
) -> list[MetricsRecord]:
    """Epoch loop: seeded shuffle, Adam with warmup schedule, metrics rows.

    Checkpoints (if out_dir is given): model_final.ckpt always, plus
    model_epoch<k>.ckpt per cadence.  No early stopping; training always
    runs to the configured epoch count.
    """
    if not corpus.train:
        raise ValueError("corpus has no training datasets")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    schedule = ScheduleConfig(
        d_model=model.cfg.d_model, warmup_steps=cfg.warmup_steps, scale=cfg.lr_scale
    )
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2**32]))
    history: list[MetricsRecord] = []
    # resuming from a checkpoint with optimizer state continues the
    # schedule where it left off
    global_step = model.store.step_count

    for epoch in range(1, cfg.epochs + 1):
        order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = order_rng.permutation(len(corpus.train))
        loss_sum = acc_sum = kept_sum = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [corpus.train[i] for i in order[start : start + cfg.batch_size]]
            model.store.zero_grads()
            loss, accuracy, kept = _batch_loss(
                model, chunk, cfg.label_smoothing, training=True, rng=drop_rng
            )
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise RuntimeError(
                    f"non-finite loss {loss_value} at step {global_step + 1}"
                )
            loss.backward()
            global_step += 1
            adam_step(model.store, noam_lr(global_step, schedule))
            loss_sum += loss_value * kept
            acc_sum += accuracy * kept
            kept_sum += kept

        history.append(
            MetricsRecord(epoch, "train", loss_sum / kept_sum, acc_sum / kept_sum)
        )
        for split_name, datasets in (
            ("val", corpus.validation),
            ("test", corpus.test),
        ):
            if datasets:
                loss_val, acc_val = evaluate_split(
                    model, datasets, cfg.batch_size, cfg.label_smoothing
                )
                history.append(MetricsRecord(epoch, split_name, loss_val, acc_val))

        if out_dir is not None and cfg.checkpoint_every:
            if epoch % cfg.checkpoint_every == 0:
                _save(model, out_dir / f"model_epoch{epoch}.ckpt")

    if out_dir is not None:
        _save(model, out_dir / "model_final.ckpt")
        write_metrics_csv(history, out_dir / "metrics.csv")
    return history


def _save(model: Model, path: Path) -> None:
    from dataclasses import asdict

    save_checkpoint(
        path, model.store, asdict(model.cfg),
        include_optimizer=model.store.has_moments(),
    )


def load_model(path: Path) -> Model:
    """Rebuild a Model (plus optimizer state, if saved) from a checkpoint."""
    from .model import ModelConfig
    from .tensor_nn import load_checkpoint

    store, config = load_checkpoint(path)
    model = Model(ModelConfig(**config), seed=0)
    model.copy_parameters_from(store)
    if store.has_moments():
        for name, _ in store.items():
            model.store.set_moments(name, *store.moments(name))
        model.store.step_count = store.step_count
    return model
