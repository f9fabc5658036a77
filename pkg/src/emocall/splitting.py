"""Leakage-free call-level train/test splitting and cross-validation folds.

Splits operate on whole calls, never on individual segments, so no caller's
voice appears on both sides of any split. All assignments are pure
functions of (sorted call ids, parameters, seed): call ids are sorted
lexicographically, then shuffled with a PCG64 generator keyed by the seed,
which pins the assignment across platforms and runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Call, Segment

PLAN_FORMAT_VERSION = 1

# Stream tags keep the holdout shuffle and the fold shuffle independent.
_HOLDOUT_STREAM = 1
_FOLD_STREAM = 2


@dataclass
class SplitPlan:
    """Call-level assignment: holdout test set plus optional CV folds."""

    seed: int
    ratio: tuple[int, int]
    test_calls: frozenset[str]
    train_calls: frozenset[str]
    folds: dict[str, int] = field(default_factory=dict)

    @property
    def num_folds(self) -> int:
        return max(self.folds.values()) + 1 if self.folds else 0

    def fold_calls(self, fold: int) -> frozenset[str]:
        return frozenset(cid for cid, f in self.folds.items() if f == fold)

    def to_dict(self) -> dict:
        return {
            "format_version": PLAN_FORMAT_VERSION,
            "seed": self.seed,
            "ratio": list(self.ratio),
            "k": self.num_folds,
            "test_calls": sorted(self.test_calls),
            "train_calls": sorted(self.train_calls),
            "folds": {cid: self.folds[cid] for cid in sorted(self.folds)},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitPlan":
        if doc.get("format_version") != PLAN_FORMAT_VERSION:
            raise ValueError(f"unsupported split plan version {doc.get('format_version')!r}")
        return cls(
            seed=doc["seed"],
            ratio=tuple(doc["ratio"]),
            test_calls=frozenset(doc["test_calls"]),
            train_calls=frozenset(doc["train_calls"]),
            folds=dict(doc["folds"]),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SplitPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _shuffled_ids(call_ids: Sequence[str], seed: int, stream: int) -> list[str]:
    ordered = sorted(call_ids)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))
    perm = rng.permutation(len(ordered))
    return [ordered[i] for i in perm]


def holdout_split(calls: Sequence[Call], ratio: tuple[int, int], seed: int) -> SplitPlan:
    """Split calls into train/test at the given ``train:test`` ratio.

    The test count is the ratio share rounded to the nearest integer
    (half up), clamped to leave at least one call on each side. Folds are
    left empty; use :func:`assign_folds`.
    """
    train_part, test_part = ratio
    if train_part <= 0 or test_part <= 0:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    call_ids = [c.call_id for c in calls]
    if len(call_ids) != len(set(call_ids)):
        raise ValueError("duplicate call ids")
    n = len(call_ids)
    if n < 2:
        raise ValueError(f"need at least 2 calls to split, got {n}")
    if n < train_part + test_part:
        raise ValueError(f"fewer calls ({n}) than ratio parts ({train_part}:{test_part})")

    n_test = int(np.floor(n * test_part / (train_part + test_part) + 0.5))
    n_test = min(max(n_test, 1), n - 1)

    shuffled = _shuffled_ids(call_ids, seed, _HOLDOUT_STREAM)
    test = frozenset(shuffled[:n_test])
    train = frozenset(shuffled[n_test:])
    return SplitPlan(seed=seed, ratio=(train_part, test_part), test_calls=test, train_calls=train)


def assign_folds(plan: SplitPlan, k: int, seed: int | None = None) -> SplitPlan:
    """Partition the plan's training calls into k folds with sizes differing
    by at most one. Returns a new plan; the input is not modified."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(plan.train_calls):
        raise ValueError(f"k={k} exceeds number of training calls ({len(plan.train_calls)})")
    seed = plan.seed if seed is None else seed
    shuffled = _shuffled_ids(sorted(plan.train_calls), seed, _FOLD_STREAM)
    n = len(shuffled)
    base, extra = divmod(n, k)
    folds: dict[str, int] = {}
    pos = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        for cid in shuffled[pos : pos + size]:
            folds[cid] = f
        pos += size
    return SplitPlan(
        seed=plan.seed,
        ratio=plan.ratio,
        test_calls=plan.test_calls,
        train_calls=plan.train_calls,
        folds=folds,
    )


def _role_call_ids(plan: SplitPlan, role: str) -> frozenset[str]:
    if role == "train":
        return plan.train_calls
    if role == "test":
        return plan.test_calls
    if role.startswith("fold-") and role.endswith(("-train", "-val")):
        if not plan.folds:
            raise ValueError("plan has no folds; run assign_folds first")
        middle = role[len("fold-") : role.rindex("-")]
        try:
            fold = int(middle)
        except ValueError:
            raise ValueError(f"unknown role {role!r}") from None
        if not 0 <= fold < plan.num_folds:
            raise ValueError(f"fold {fold} outside 0..{plan.num_folds - 1}")
        val = plan.fold_calls(fold)
        return val if role.endswith("-val") else plan.train_calls - val
    raise ValueError(f"unknown role {role!r}")


def materialize(plan: SplitPlan, calls: Sequence[Call], role: str) -> list[Segment]:
    """Return all segments of the calls assigned to ``role``.

    Roles: ``train``, ``test``, ``fold-<f>-train``, ``fold-<f>-val``.
    Every call in the corpus must be covered by the plan and vice versa.
    """
    corpus_ids = {c.call_id for c in calls}
    plan_ids = plan.train_calls | plan.test_calls
    missing = corpus_ids - plan_ids
    extra = plan_ids - corpus_ids
    if missing:
        raise ValueError(f"calls not covered by plan: {sorted(missing)[:5]}")
    if extra:
        raise ValueError(f"plan references unknown calls: {sorted(extra)[:5]}")
    wanted = _role_call_ids(plan, role)
    out: list[Segment] = []
    for call in calls:
        if call.call_id in wanted:
            out.extend(call.segments)
    return out
