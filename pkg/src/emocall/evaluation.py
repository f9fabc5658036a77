"""Weighted evaluation metrics for both tasks, plus error-analysis export.

Per-class precision, recall, and F1 use the 0/0 := 0 convention. Weighted
averages weight each class by its support (true count in the evaluated
set), which counters class imbalance; classes with zero support get zero
weight. Accuracy is the fraction of exactly correct segments: predicted
class for the binary task, exact label-set match for the fine-grained one.

All functions are pure; counts merge associatively, so evaluation can be
parallelized over segment chunks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .classifier import BINARY, FINE, Prediction
from .corpus import NUM_CLASSES, ConsolidatedLabel, LabelTaxonomy, Segment


@dataclass(frozen=True)
class BinaryConfusion:
    """Counts for the negative-emotion class as positive."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class MetricsReport:
    task: str
    segment_count: int
    accuracy: float
    per_class: dict[str, ClassMetrics]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    macro_f1: float
    confusion: BinaryConfusion | None = None

    def to_dict(self) -> dict:
        doc = {
            "task": self.task,
            "segment_count": self.segment_count,
            "accuracy": self.accuracy,
            "per_class": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                }
                for name, m in self.per_class.items()
            },
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
        }
        if self.confusion is not None:
            doc["confusion"] = {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "tn": self.confusion.tn,
                "fn": self.confusion.fn,
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        confusion = None
        if "confusion" in doc:
            confusion = BinaryConfusion(**doc["confusion"])
        per_class = {
            name: ClassMetrics(**vals) for name, vals in doc["per_class"].items()
        }
        return cls(
            task=doc["task"],
            segment_count=doc["segment_count"],
            accuracy=doc["accuracy"],
            per_class=per_class,
            weighted_precision=doc["weighted_precision"],
            weighted_recall=doc["weighted_recall"],
            weighted_f1=doc["weighted_f1"],
            macro_f1=doc["macro_f1"],
            confusion=confusion,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _weighted(per_class: dict[str, ClassMetrics]) -> tuple[float, float, float, float]:
    total = sum(m.support for m in per_class.values())
    if total == 0:
        w_p = w_r = w_f = 0.0
    else:
        w_p = sum(m.support * m.precision for m in per_class.values()) / total
        w_r = sum(m.support * m.recall for m in per_class.values()) / total
        w_f = sum(m.support * m.f1 for m in per_class.values()) / total
    macro = sum(m.f1 for m in per_class.values()) / len(per_class) if per_class else 0.0
    return w_p, w_r, w_f, macro


def binary_metrics(
    preds: Sequence[Prediction], truths: Sequence[ConsolidatedLabel]
) -> MetricsReport:
    """Metrics for the negative-emotion recognition task.

    Precision/recall/F1 are support-weighted averages over the two classes;
    accuracy is the plain fraction correct (these coincide for recall).
    """
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise ValueError("cannot evaluate zero segments")
    tp = fp = tn = fn = 0
    for pred, truth in zip(preds, truths):
        if pred.binary_label is None:
            raise ValueError("prediction has no binary_label; was it decided as binary?")
        if pred.binary_label and truth.negative:
            tp += 1
        elif pred.binary_label and not truth.negative:
            fp += 1
        elif not pred.binary_label and truth.negative:
            fn += 1
        else:
            tn += 1
    confusion = BinaryConfusion(tp=tp, fp=fp, tn=tn, fn=fn)
    n = confusion.total

    p1, r1, f11 = _prf(tp, fp, fn)
    p0, r0, f10 = _prf(tn, fn, fp)
    per_class = {
        "non_negative": ClassMetrics(p0, r0, f10, support=tn + fp, tp=tn, fp=fn, fn=fp),
        "negative": ClassMetrics(p1, r1, f11, support=tp + fn, tp=tp, fp=fp, fn=fn),
    }
    w_p, w_r, w_f, macro = _weighted(per_class)
    return MetricsReport(
        task=BINARY,
        segment_count=n,
        accuracy=(tp + tn) / n,
        per_class=per_class,
        weighted_precision=w_p,
        weighted_recall=w_r,
        weighted_f1=w_f,
        macro_f1=macro,
        confusion=confusion,
    )


def multilabel_metrics(
    preds: Sequence[Prediction],
    truths: Sequence[ConsolidatedLabel],
    taxonomy: LabelTaxonomy | None = None,
) -> MetricsReport:
    """Metrics for the fine-grained multi-label task.

    Per-class counts over the 11 categories with support-weighted averages;
    accuracy is the exact label-set match rate.
    """
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions vs {len(truths)} truths")
    if not preds:
        raise ValueError("cannot evaluate zero segments")
    taxonomy = taxonomy or LabelTaxonomy.default()
    tp = [0] * NUM_CLASSES
    fp = [0] * NUM_CLASSES
    fn = [0] * NUM_CLASSES
    exact = 0
    for pred, truth in zip(preds, truths):
        if pred.label_set is None:
            raise ValueError("prediction has no label_set; was it decided as fine-grained?")
        truth_set = truth.label_ids
        if pred.label_set == truth_set:
            exact += 1
        for c in range(1, NUM_CLASSES + 1):
            in_pred = c in pred.label_set
            in_truth = c in truth_set
            if in_pred and in_truth:
                tp[c - 1] += 1
            elif in_pred:
                fp[c - 1] += 1
            elif in_truth:
                fn[c - 1] += 1

    per_class = {}
    for c in range(NUM_CLASSES):
        precision, recall, f1 = _prf(tp[c], fp[c], fn[c])
        per_class[taxonomy.names[c]] = ClassMetrics(
            precision, recall, f1, support=tp[c] + fn[c], tp=tp[c], fp=fp[c], fn=fn[c]
        )
    w_p, w_r, w_f, macro = _weighted(per_class)
    return MetricsReport(
        task=FINE,
        segment_count=len(preds),
        accuracy=exact / len(preds),
        per_class=per_class,
        weighted_precision=w_p,
        weighted_recall=w_r,
        weighted_f1=w_f,
        macro_f1=macro,
    )


@dataclass(frozen=True)
class ErrorRecord:
    """One prediction discrepancy, for manual error analysis."""

    segment_id: str
    jaccard_distance: float
    true_labels: tuple[str, ...]
    predicted_labels: tuple[str, ...]
    transcript: str | None = None


def jaccard_distance(a: frozenset[int], b: frozenset[int]) -> float:
    if not a and not b:
        return 0.0
    return 1.0 - len(a & b) / len(a | b)


def error_report(
    preds: Sequence[Prediction],
    truths: Sequence[ConsolidatedLabel],
    segments: Sequence[Segment],
    limit: int | None = None,
    taxonomy: LabelTaxonomy | None = None,
) -> list[ErrorRecord]:
    """Label-set discrepancies sorted worst-first by Jaccard distance.

    Segments whose prediction matches the truth exactly (distance 0) are
    excluded. Ties break on segment id for a stable order.
    """
    if not len(preds) == len(truths) == len(segments):
        raise ValueError("preds, truths, and segments must be aligned")
    taxonomy = taxonomy or LabelTaxonomy.default()
    records = []
    for pred, truth, seg in zip(preds, truths, segments):
        if pred.label_set is None:
            raise ValueError("error_report needs fine-grained predictions")
        dist = jaccard_distance(pred.label_set, truth.label_ids)
        if dist == 0.0:
            continue
        records.append(
            ErrorRecord(
                segment_id=seg.segment_id,
                jaccard_distance=dist,
                true_labels=tuple(taxonomy.name_of(i) for i in sorted(truth.label_ids)),
                predicted_labels=tuple(taxonomy.name_of(i) for i in sorted(pred.label_set)),
                transcript=seg.transcript,
            )
        )
    records.sort(key=lambda r: (-r.jaccard_distance, r.segment_id))
    return records[:limit] if limit is not None else records


def _names_or_none(names: tuple[str, ...]) -> str:
    return ", ".join(names) if names else "None"


def render_error_report(records: Sequence[ErrorRecord]) -> str:
    """Tab-delimited export: one row per discrepancy, UTF-8 transcripts."""
    lines = ["segment_id\tjaccard_distance\tlabels\tpredictions\ttranscript"]
    for r in records:
        lines.append(
            "\t".join(
                [
                    r.segment_id,
                    f"{r.jaccard_distance:.4f}",
                    _names_or_none(r.true_labels),
                    _names_or_none(r.predicted_labels),
                    r.transcript or "",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_metrics(report: MetricsReport, model_name: str = "model") -> str:
    """Console tables: a summary row plus the per-class breakdown."""
    lines = []
    header = f"{'Model':<24}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    lines.append(
        f"{model_name:<24}"
        f"{report.accuracy:>10.2%}"
        f"{report.weighted_precision:>11.2%}"
        f"{report.weighted_recall:>9.2%}"
        f"{report.weighted_f1:>9.2%}"
    )
    lines.append("")
    name_w = max(len(n) for n in report.per_class) + 2
    sub = f"{'Class':<{name_w}}{'Precision':>11}{'Recall':>9}{'F1':>9}{'Support':>9}"
    lines.append(sub)
    lines.append("-" * len(sub))
    for name, m in report.per_class.items():
        lines.append(
            f"{name:<{name_w}}{m.precision:>11.2%}{m.recall:>9.2%}{m.f1:>9.2%}{m.support:>9}"
        )
    lines.append("")
    lines.append(
        f"Macro F1: {report.macro_f1:.2%}   Segments: {report.segment_count}"
        + (
            f"   Confusion tp={report.confusion.tp} fp={report.confusion.fp}"
            f" tn={report.confusion.tn} fn={report.confusion.fn}"
            if report.confusion
            else ""
        )
    )
    lines.append("Note: cells with zero denominators use the 0/0 := 0 convention.")
    return "\n".join(lines)
