"""Mini-batch training with gradient accumulation, CV runs, checkpointing.

One training run is a single logical writer over head parameters. The
encoder stays frozen (head-only training); pooled features are extracted
once per segment up front, optionally through the on-disk feature cache.

Gradient accumulation averages gradients over the accumulation window
weighted by micro-batch size, so a window of two micro-batches of 16 is
numerically identical to one batch of 32. The optimizer defaults to Adam;
plain gradient descent ("sgd") keeps that equivalence exact and is what
the accumulation-equivalence check uses.

Reduced precision emulates mixed fp16 training: parameters and features
are quantized to float16 before each forward/backward pass while master
weights and optimizer state stay float64. Off by default; it exists for
parity with GPU half-precision training, not for correctness.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classifier
from .classifier import (
    BINARY,
    HeadArtifact,
    HeadConfig,
    HeadParameters,
    decide_batch,
    init_params,
    loss_and_grads,
    targets_from_labels,
)
from .corpus import Call, LabelTaxonomy, Segment
from .encoding import EncoderSpec, FeatureExtractor
from .evaluation import MetricsReport, binary_metrics, multilabel_metrics
from .splitting import SplitPlan, materialize


class LeakageError(RuntimeError):
    """A call id appeared on both sides of a train/validation split."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-4
    grad_accum_steps: int = 2
    epochs: int = 3
    precision: str = "full"  # or "reduced"
    seed: int = 0
    freeze_encoder: bool = True
    threshold: float = 0.5
    optimizer: str = "adam"  # or "sgd"
    hidden_dim: int | None = None  # defaults to the feature dimension
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_accum_steps < 1:
            raise ValueError("grad_accum_steps must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.precision not in ("full", "reduced"):
            raise ValueError(f"precision must be 'full' or 'reduced', got {self.precision!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not self.freeze_encoder:
            raise NotImplementedError(
                "full encoder fine-tuning is adapter-dependent and not implemented; "
                "set freeze_encoder=True"
            )


@dataclass
class RunRecord:
    fold: str
    epoch_train_loss: list[float]
    val_metrics: MetricsReport | None
    artifact_path: str | None
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "epoch_train_loss": self.epoch_train_loss,
            "val_metrics": self.val_metrics.to_dict() if self.val_metrics else None,
            "artifact_path": self.artifact_path,
            "wall_seconds": self.wall_seconds,
        }


def append_run_record(path: str | Path, record: RunRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


class _Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] | None = None
        self.v: dict[str, np.ndarray] | None = None

    def step(self, params: HeadParameters, grads: HeadParameters) -> None:
        arrays = params.arrays()
        gs = grads.arrays()
        if self.m is None:
            self.m = {k: np.zeros_like(a) for k, a in arrays.items()}
            self.v = {k: np.zeros_like(a) for k, a in arrays.items()}
        self.t += 1
        for k, a in arrays.items():
            g = gs[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            a -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: HeadParameters, grads: HeadParameters) -> None:
        arrays = params.arrays()
        for k, g in grads.arrays().items():
            arrays[k] -= self.lr * g


def _make_optimizer(cfg: TrainConfig):
    return _Adam(cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(cfg.learning_rate)


def _check_disjoint(train_segs: Sequence[Segment], val_segs: Sequence[Segment]) -> None:
    train_calls = {s.call_id for s in train_segs}
    val_calls = {s.call_id for s in val_segs}
    overlap = train_calls & val_calls
    if overlap:
        raise LeakageError(
            f"calls on both sides of the split: {sorted(overlap)[:5]}"
            + ("..." if len(overlap) > 5 else "")
        )


def _targets(segs: Sequence[Segment], task: str) -> np.ndarray:
    labels = []
    for seg in segs:
        if seg.consolidated is None:
            raise ValueError(f"segment {seg.segment_id!r} not consolidated")
        labels.append(seg.consolidated)
    return targets_from_labels(labels, task)


def _reduced_precision_grads(X, targets, params, cfg, train, rng):
    """Forward/backward on float16-quantized parameters and features."""
    p16 = HeadParameters(
        **{k: a.astype(np.float16).astype(np.float64) for k, a in params.arrays().items()}
    )
    X16 = X.astype(np.float16).astype(np.float64)
    return loss_and_grads(X16, targets, p16, cfg, train=train, rng=rng)


def train_head(
    X_train: np.ndarray,
    train_segs: Sequence[Segment],
    head_cfg: HeadConfig,
    cfg: TrainConfig,
) -> tuple[HeadParameters, list[float]]:
    """Core loop over pre-extracted features; returns final-epoch parameters
    and the mean training loss of each epoch."""
    params = init_params(head_cfg, cfg.seed)
    optimizer = _make_optimizer(cfg)
    targets = _targets(train_segs, head_cfg.task)
    n = len(train_segs)
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xE90C]))
    )
    dropout_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xD809]))
    )
    reduced = cfg.precision == "reduced"
    epoch_losses: list[float] = []
    for _epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        acc = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        acc_count = 0
        micro_in_window = 0
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            Xb = X_train[idx]
            tb = targets[idx]
            if reduced:
                value, grads = _reduced_precision_grads(
                    Xb, tb, params, head_cfg, True, dropout_rng
                )
            else:
                value, grads = loss_and_grads(
                    Xb, tb, params, head_cfg, train=True, rng=dropout_rng
                )
            for k, g in grads.arrays().items():
                acc[k] += np.asarray(g, dtype=np.float64) * len(idx)
            acc_count += len(idx)
            micro_in_window += 1
            loss_sum += value * len(idx)
            if micro_in_window == cfg.grad_accum_steps or lo + cfg.batch_size >= n:
                window_grads = HeadParameters(**{k: g / acc_count for k, g in acc.items()})
                optimizer.step(params, window_grads)
                acc = {k: np.zeros_like(a) for k, a in params.arrays().items()}
                acc_count = 0
                micro_in_window = 0
        epoch_losses.append(loss_sum / n)
    return params, epoch_losses


def train_one(
    train_segs: Sequence[Segment],
    val_segs: Sequence[Segment],
    encoder: EncoderSpec,
    cfg: TrainConfig,
    task: str = BINARY,
    extractor: FeatureExtractor | None = None,
    taxonomy: LabelTaxonomy | None = None,
    artifact_path: str | Path | None = None,
    fold: str = "final",
) -> RunRecord:
    """Train the head on train_segs, evaluate on val_segs, optionally save.

    Aborts with :class:`LeakageError` if any call id appears on both sides,
    independently of whatever split produced the inputs.
    """
    if not train_segs:
        raise ValueError("empty training set")
    _check_disjoint(train_segs, val_segs)
    taxonomy = taxonomy or LabelTaxonomy.default()
    extractor = extractor or FeatureExtractor(encoder)

    started = time.perf_counter()
    X_train = extractor.pooled_matrix(train_segs)
    head_cfg = HeadConfig(
        input_dim=encoder.feature_dim,
        hidden_dim=cfg.hidden_dim or encoder.feature_dim,
        dropout_p=cfg.dropout_p,
        task=task,
    )
    params, epoch_losses = train_head(X_train, train_segs, head_cfg, cfg)

    val_metrics = None
    if val_segs:
        val_metrics = evaluate_head(params, head_cfg, val_segs, extractor, cfg.threshold, taxonomy)

    saved_path = None
    if artifact_path is not None:
        artifact = HeadArtifact(
            cfg=head_cfg,
            params=params,
            encoder_id=encoder.encoder_id,
            pooling=encoder.pooling,
            taxonomy_names=taxonomy.names,
            taxonomy_fingerprint=taxonomy.fingerprint(),
            threshold=cfg.threshold,
        )
        classifier.save_head(artifact, artifact_path)
        saved_path = str(artifact_path)

    return RunRecord(
        fold=fold,
        epoch_train_loss=epoch_losses,
        val_metrics=val_metrics,
        artifact_path=saved_path,
        wall_seconds=time.perf_counter() - started,
    )


def evaluate_head(
    params: HeadParameters,
    head_cfg: HeadConfig,
    segs: Sequence[Segment],
    extractor: FeatureExtractor,
    threshold: float = 0.5,
    taxonomy: LabelTaxonomy | None = None,
) -> MetricsReport:
    """Eval-mode predictions for a segment list, scored against truth labels."""
    X = extractor.pooled_matrix(segs)
    logits = classifier.forward(X, params, head_cfg, mode="eval")
    preds = decide_batch(logits, head_cfg, threshold)
    truths = [seg.consolidated for seg in segs]
    if any(t is None for t in truths):
        raise ValueError("evaluation segments must be consolidated")
    if head_cfg.task == BINARY:
        return binary_metrics(preds, truths)
    return multilabel_metrics(preds, truths, taxonomy or LabelTaxonomy.default())


@dataclass
class CrossValidationSummary:
    records: list[RunRecord]
    mean_weighted_f1: float
    std_weighted_f1: float

    def to_dict(self) -> dict:
        return {
            "folds": [r.to_dict() for r in self.records],
            "mean_weighted_f1": self.mean_weighted_f1,
            "std_weighted_f1": self.std_weighted_f1,
        }


def cross_validate(
    plan: SplitPlan,
    calls: Sequence[Call],
    encoder: EncoderSpec,
    cfg: TrainConfig,
    task: str = BINARY,
    extractor: FeatureExtractor | None = None,
    taxonomy: LabelTaxonomy | None = None,
) -> CrossValidationSummary:
    """One independent training run per fold: train on k-1 folds, validate
    on the held-out fold. Test calls are untouched."""
    if not plan.folds:
        raise ValueError("split plan has no folds; run assign_folds first")
    extractor = extractor or FeatureExtractor(encoder)
    records = []
    for f in range(plan.num_folds):
        train_segs = materialize(plan, calls, f"fold-{f}-train")
        val_segs = materialize(plan, calls, f"fold-{f}-val")
        record = train_one(
            train_segs,
            val_segs,
            encoder,
            cfg,
            task=task,
            extractor=extractor,
            taxonomy=taxonomy,
            fold=f"fold-{f}",
        )
        records.append(record)
    scores = np.array([r.val_metrics.weighted_f1 for r in records])
    return CrossValidationSummary(
        records=records,
        mean_weighted_f1=float(scores.mean()),
        std_weighted_f1=float(scores.std()),
    )


def finalize(
    plan: SplitPlan,
    calls: Sequence[Call],
    encoder: EncoderSpec,
    cfg: TrainConfig,
    task: str = BINARY,
    artifact_path: str | Path = "model.head",
    extractor: FeatureExtractor | None = None,
    taxonomy: LabelTaxonomy | None = None,
) -> tuple[RunRecord, MetricsReport]:
    """Refit on all training calls, then score once on the held-out test
    calls and write the model artifact."""
    train_segs = materialize(plan, calls, "train")
    test_segs = materialize(plan, calls, "test")
    record = train_one(
        train_segs,
        test_segs,
        encoder,
        cfg,
        task=task,
        extractor=extractor,
        taxonomy=taxonomy,
        artifact_path=artifact_path,
        fold="final",
    )
    return record, record.val_metrics
