"""Corpus ingestion and statistics walkthrough.

Builds a small annotated corpus in memory, consolidates the three
annotators' labels by set union, and prints the statistics tables:
per-class counts, label-cardinality distribution, co-occurrence, and the
duration histogram.
"""

import numpy as np

from emocall.corpus import (
    AnnotatorLabels,
    Call,
    LabelTaxonomy,
    Segment,
    compute_stats,
    consolidate_calls,
    render_stats,
    validate_corpus,
)

rng = np.random.default_rng(0)
taxonomy = LabelTaxonomy.default()

# Three annotators per segment; each marks a subset of the "true" labels, so
# consolidation has to union them back together.
calls = []
for c in range(12):
    segments = []
    cursor = 0.0
    for s in range(rng.integers(20, 40)):
        true_labels = set()
        if rng.random() < 0.5:
            true_labels = {int(i) + 1 for i in np.flatnonzero(rng.random(11) < 0.25)}
        annotations = []
        for a in range(3):
            subset = frozenset(l for l in true_labels if rng.random() < 0.7)
            annotations.append(
                AnnotatorLabels(f"expert-{a+1}", negative=bool(subset), labels=subset)
            )
        duration = float(rng.lognormal(1.2, 0.8))
        segments.append(
            Segment(
                call_id=f"call-{c:03d}",
                segment_id=f"call-{c:03d}-seg-{s:03d}",
                audio_ref=f"call-{c:03d}.wav",
                start_s=cursor,
                end_s=cursor + duration,
                sample_rate=16000,
                annotations=tuple(annotations),
            )
        )
        cursor += duration + 0.2
    calls.append(Call(call_id=f"call-{c:03d}", segments=tuple(segments)))

calls = consolidate_calls(calls)

violations = validate_corpus(calls)
print(f"validation violations: {len(violations)}")

stats = compute_stats(calls)
print()
print(render_stats(stats, taxonomy))

# The count identity that always holds: summing the per-class table equals
# summing k * (segments with exactly k labels).
lhs = sum(stats.per_class_counts.values())
rhs = sum(k * v for k, v in stats.cardinality_counts.items())
print(f"\nlabel instances: {lhs} == sum k*cardinality: {rhs}")

print("\nco-occurrence (top-left 5x5 corner, diagonal = class totals):")
for row in stats.cooccurrence[:5]:
    print("  " + " ".join(f"{v:5d}" for v in row[:5]))
