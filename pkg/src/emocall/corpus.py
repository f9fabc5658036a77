"""Corpus data model: annotated call segments, label consolidation, statistics.

A corpus is a list of calls; each call is an ordered list of segments (one
caller utterance each). Segments carry per-annotator labels over an
11-category negative-emotion taxonomy plus a binary negative flag. Up to
three annotators label each segment; their results are merged by set union
(labels) and boolean OR (negative flag).

Corpus objects are frozen dataclasses: immutable after load, safe for
concurrent reads.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

NUM_CLASSES = 11

# Ship-with taxonomy: 11 negative-emotion categories, ids 1..11.
DEFAULT_TAXONOMY_NAMES = (
    "Sadness",
    "Pain",
    "Grievance",
    "Confuse",
    "Resentment",
    "Helplessness",
    "Anxiety",
    "Guilt",
    "Numbness",
    "Despair",
    "Fear",
)

# Duration histogram bucket edges in seconds; last bucket is open-ended.
DURATION_BUCKET_EDGES = (0.0, 3.0, 6.0, 15.0, 30.0)
DURATION_BUCKET_LABELS = ("0-3s", "3-6s", "6-15s", "15-30s", "30s+")


class ManifestError(ValueError):
    """Raised for fatal problems while reading a segment manifest."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class LabelTaxonomy:
    """Ordered 11-category label taxonomy with 1-based ids."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != NUM_CLASSES:
            raise ValueError(f"taxonomy must have {NUM_CLASSES} labels, got {len(self.names)}")
        if len(set(self.names)) != NUM_CLASSES:
            raise ValueError("taxonomy names must be unique")

    def name_of(self, label_id: int) -> str:
        if not 1 <= label_id <= NUM_CLASSES:
            raise ValueError(f"label id {label_id} outside 1..{NUM_CLASSES}")
        return self.names[label_id - 1]

    def id_of(self, name: str) -> int:
        return self.names.index(name) + 1

    def fingerprint(self) -> str:
        """Stable hex digest of the id/name table; stored in model artifacts."""
        import hashlib

        canon = "".join(f"{i}\t{n}\n" for i, n in enumerate(self.names, start=1))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @classmethod
    def default(cls) -> "LabelTaxonomy":
        return cls(DEFAULT_TAXONOMY_NAMES)

    @classmethod
    def from_file(cls, path: str | Path) -> "LabelTaxonomy":
        """Parse a taxonomy file: 11 lines of ``id<TAB>name``."""
        entries = {}
        for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"taxonomy line {line_no}: expected 'id<TAB>name', got {raw!r}")
            try:
                label_id = int(parts[0])
            except ValueError:
                raise ValueError(f"taxonomy line {line_no}: bad id {parts[0]!r}") from None
            if label_id in entries:
                raise ValueError(f"taxonomy line {line_no}: duplicate id {label_id}")
            entries[label_id] = parts[1]
        if sorted(entries) != list(range(1, NUM_CLASSES + 1)):
            raise ValueError(f"taxonomy must define ids 1..{NUM_CLASSES} exactly")
        return cls(tuple(entries[i] for i in range(1, NUM_CLASSES + 1)))

    def to_file(self, path: str | Path) -> None:
        text = "".join(f"{i}\t{n}\n" for i, n in enumerate(self.names, start=1))
        Path(path).write_text(text, encoding="utf-8")


@dataclass(frozen=True)
class AnnotatorLabels:
    """One annotator's judgement for a segment."""

    annotator_id: str
    negative: bool
    labels: frozenset[int] = frozenset()


@dataclass(frozen=True)
class ConsolidatedLabel:
    """Merged ground truth: negative flag plus an 11-dim multi-hot vector."""

    negative: bool
    multi_hot: tuple[int, ...]

    def __post_init__(self):
        if len(self.multi_hot) != NUM_CLASSES:
            raise ValueError(f"multi_hot must have {NUM_CLASSES} entries")
        if any(v not in (0, 1) for v in self.multi_hot):
            raise ValueError("multi_hot entries must be 0 or 1")

    @property
    def label_ids(self) -> frozenset[int]:
        return frozenset(i + 1 for i, v in enumerate(self.multi_hot) if v)

    @property
    def cardinality(self) -> int:
        return sum(self.multi_hot)


@dataclass(frozen=True)
class Segment:
    """One caller utterance: audio reference, timing, annotations."""

    call_id: str
    segment_id: str
    audio_ref: str
    start_s: float
    end_s: float
    sample_rate: int
    annotations: tuple[AnnotatorLabels, ...]
    consolidated: ConsolidatedLabel | None = None
    transcript: str | None = None

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Call:
    """A full recorded conversation; the unit of train/test splitting."""

    call_id: str
    segments: tuple[Segment, ...]


@dataclass
class CorpusStats:
    """Corpus-level label and duration statistics."""

    per_class_counts: dict[int, int]
    cardinality_counts: dict[int, int]
    cooccurrence: list[list[int]]
    duration_histogram: dict[str, int]
    mean_duration_s: float
    max_duration_s: float
    negative_count: int
    non_negative_count: int
    segment_count: int
    call_count: int

    def to_dict(self) -> dict:
        return {
            "per_class_counts": {str(k): v for k, v in sorted(self.per_class_counts.items())},
            "cardinality_counts": {str(k): v for k, v in sorted(self.cardinality_counts.items())},
            "cooccurrence": self.cooccurrence,
            "duration_histogram": dict(self.duration_histogram),
            "mean_duration_s": self.mean_duration_s,
            "max_duration_s": self.max_duration_s,
            "negative_count": self.negative_count,
            "non_negative_count": self.non_negative_count,
            "segment_count": self.segment_count,
            "call_count": self.call_count,
        }


@dataclass(frozen=True)
class Violation:
    """One non-fatal corpus invariant breach found by validate_corpus."""

    code: str
    where: str
    message: str


def consolidate(annotations: Sequence[AnnotatorLabels]) -> ConsolidatedLabel:
    """Merge 1..3 annotator judgements: label set union, negative-flag OR.

    Permutation-invariant and idempotent in the annotator list.
    """
    if not annotations:
        raise ValueError("cannot consolidate zero annotators")
    if len(annotations) > 3:
        raise ValueError(f"at most 3 annotators per segment, got {len(annotations)}")
    union: set[int] = set()
    negative = False
    for ann in annotations:
        union |= set(ann.labels)
        negative = negative or ann.negative
    if any(not 1 <= lab <= NUM_CLASSES for lab in union):
        raise ValueError(f"label ids outside 1..{NUM_CLASSES}: {sorted(union)}")
    multi_hot = tuple(1 if i in union else 0 for i in range(1, NUM_CLASSES + 1))
    return ConsolidatedLabel(negative=negative, multi_hot=multi_hot)


def consolidate_calls(calls: Sequence[Call]) -> list[Call]:
    """Return a copy of the corpus with every segment's consolidated label set."""
    out = []
    for call in calls:
        segs = tuple(
            replace(seg, consolidated=consolidate(seg.annotations)) for seg in call.segments
        )
        out.append(Call(call_id=call.call_id, segments=segs))
    return out


def _parse_annotation(obj: dict, line_no: int) -> AnnotatorLabels:
    try:
        annotator_id = str(obj["annotator_id"])
        negative = bool(obj["negative"])
        labels = obj.get("labels", [])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"bad annotation record: {exc}", line_no) from None
    parsed = set()
    for lab in labels:
        if not isinstance(lab, int) or isinstance(lab, bool) or not 1 <= lab <= NUM_CLASSES:
            raise ManifestError(f"label id {lab!r} outside 1..{NUM_CLASSES}", line_no)
        parsed.add(lab)
    return AnnotatorLabels(annotator_id=annotator_id, negative=negative, labels=frozenset(parsed))


def _check_audio_file(seg: Segment, line_no: int) -> None:
    path = Path(seg.audio_ref)
    if not path.exists():
        raise ManifestError(f"audio file not found: {seg.audio_ref}", line_no)
    if path.suffix.lower() != ".wav":
        return
    try:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            n_frames = wf.getnframes()
    except (wave.Error, EOFError) as exc:
        raise ManifestError(f"unreadable WAV {seg.audio_ref}: {exc}", line_no) from None
    if rate != seg.sample_rate:
        raise ManifestError(
            f"{seg.audio_ref}: sample rate {rate} != manifest {seg.sample_rate}", line_no
        )
    file_dur = n_frames / rate
    if seg.end_s > file_dur + 1e-3:
        raise ManifestError(
            f"{seg.segment_id}: end_s {seg.end_s:.3f} beyond audio duration {file_dur:.3f}",
            line_no,
        )


def load_manifest(
    manifest_path: str | Path,
    taxonomy: LabelTaxonomy | None = None,
    check_audio: bool = False,
) -> list[Call]:
    """Load a JSON Lines segment manifest into calls.

    One JSON object per line with fields ``call_id``, ``segment_id``,
    ``audio_path``, ``start_s``, ``end_s``, ``sample_rate``, optional
    ``transcript``, and ``annotations`` (array of
    ``{annotator_id, negative, labels}``).

    Returns calls sorted by call_id, each call's segments sorted by start
    time. Annotations are attached but not consolidated; run
    :func:`consolidate_calls` afterwards. Raises :class:`ManifestError`
    citing the offending line for malformed records, duplicate segment ids,
    out-of-range label ids, or non-positive durations.
    """
    del taxonomy  # label ids are validated against the fixed 1..11 range
    by_call: dict[str, list[Segment]] = {}
    seen_ids: dict[str, int] = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", line_no) from None
            if not isinstance(rec, dict):
                raise ManifestError("record must be a JSON object", line_no)
            try:
                call_id = str(rec["call_id"])
                segment_id = str(rec["segment_id"])
                audio_ref = str(rec["audio_path"])
                start_s = float(rec["start_s"])
                end_s = float(rec["end_s"])
                sample_rate = int(rec["sample_rate"])
                annotations_raw = rec["annotations"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"missing or malformed field: {exc}", line_no) from None
            if segment_id in seen_ids:
                raise ManifestError(
                    f"duplicate segment_id {segment_id!r} (first seen line {seen_ids[segment_id]})",
                    line_no,
                )
            seen_ids[segment_id] = line_no
            if not call_id:
                raise ManifestError("empty call_id", line_no)
            if end_s <= start_s:
                raise ManifestError(
                    f"segment {segment_id!r}: end_s {end_s} <= start_s {start_s}", line_no
                )
            if sample_rate <= 0:
                raise ManifestError(f"segment {segment_id!r}: sample_rate must be > 0", line_no)
            if not isinstance(annotations_raw, list) or not annotations_raw:
                raise ManifestError(
                    f"segment {segment_id!r}: annotations must be a nonempty array", line_no
                )
            annotations = tuple(_parse_annotation(a, line_no) for a in annotations_raw)
            seg = Segment(
                call_id=call_id,
                segment_id=segment_id,
                audio_ref=audio_ref,
                start_s=start_s,
                end_s=end_s,
                sample_rate=sample_rate,
                annotations=annotations,
                transcript=rec.get("transcript"),
            )
            if check_audio:
                _check_audio_file(seg, line_no)
            by_call.setdefault(call_id, []).append(seg)

    calls = []
    for call_id in sorted(by_call):
        segs = sorted(by_call[call_id], key=lambda s: (s.start_s, s.segment_id))
        calls.append(Call(call_id=call_id, segments=tuple(segs)))
    return calls


def iter_segments(calls: Iterable[Call]) -> Iterable[Segment]:
    for call in calls:
        yield from call.segments


def duration_bucket(duration_s: float) -> str:
    for label, lo, hi in zip(
        DURATION_BUCKET_LABELS, DURATION_BUCKET_EDGES, DURATION_BUCKET_EDGES[1:]
    ):
        if lo <= duration_s < hi:
            return label
    return DURATION_BUCKET_LABELS[-1]


def compute_stats(calls: Sequence[Call]) -> CorpusStats:
    """Aggregate per-class counts, label-cardinality counts, co-occurrence,
    and duration statistics over a consolidated corpus.

    The co-occurrence diagonal stores each class's total segment count, so
    the matrix's diagonal doubles as the per-class table. An empty corpus
    yields all-zero statistics.
    """
    per_class = {i: 0 for i in range(1, NUM_CLASSES + 1)}
    cardinality: dict[int, int] = {}
    cooc = [[0] * NUM_CLASSES for _ in range(NUM_CLASSES)]
    histogram = {label: 0 for label in DURATION_BUCKET_LABELS}
    total_dur = 0.0
    max_dur = 0.0
    negative = 0
    n_segments = 0

    for seg in iter_segments(calls):
        if seg.consolidated is None:
            raise ValueError(f"segment {seg.segment_id!r} not consolidated; run consolidate_calls")
        n_segments += 1
        dur = seg.duration_s
        total_dur += dur
        max_dur = max(max_dur, dur)
        histogram[duration_bucket(dur)] += 1
        lab = seg.consolidated
        if lab.negative:
            negative += 1
        ids = sorted(lab.label_ids)
        if ids:
            cardinality[len(ids)] = cardinality.get(len(ids), 0) + 1
        for i in ids:
            per_class[i] += 1
            cooc[i - 1][i - 1] += 1
        for a_idx, i in enumerate(ids):
            for j in ids[a_idx + 1 :]:
                cooc[i - 1][j - 1] += 1
                cooc[j - 1][i - 1] += 1

    return CorpusStats(
        per_class_counts=per_class,
        cardinality_counts=dict(sorted(cardinality.items())),
        cooccurrence=cooc,
        duration_histogram=histogram,
        mean_duration_s=total_dur / n_segments if n_segments else 0.0,
        max_duration_s=max_dur,
        negative_count=negative,
        non_negative_count=n_segments - negative,
        segment_count=n_segments,
        call_count=len(calls),
    )


def validate_corpus(calls: Sequence[Call]) -> list[Violation]:
    """Check segment/call invariants and report breaches without failing.

    Covers: non-positive durations, duplicate segment ids (corpus-wide),
    call-id mismatches inside a call, empty calls, unsorted segments,
    annotator or consolidated records whose labels are nonempty while the
    negative flag is false, and the cross-table identity between per-class
    totals and label-cardinality totals.
    """
    violations: list[Violation] = []
    seen: dict[str, str] = {}

    for call in calls:
        if not call.segments:
            violations.append(Violation("empty_call", call.call_id, "call has no segments"))
            continue
        starts = [seg.start_s for seg in call.segments]
        if starts != sorted(starts):
            violations.append(
                Violation("unsorted_segments", call.call_id, "segments not ordered by start_s")
            )
        for seg in call.segments:
            if seg.call_id != call.call_id:
                violations.append(
                    Violation(
                        "call_id_mismatch",
                        seg.segment_id,
                        f"segment call_id {seg.call_id!r} != call {call.call_id!r}",
                    )
                )
            if seg.segment_id in seen:
                violations.append(
                    Violation(
                        "duplicate_segment_id",
                        seg.segment_id,
                        f"also present in call {seen[seg.segment_id]!r}",
                    )
                )
            else:
                seen[seg.segment_id] = call.call_id
            if seg.end_s <= seg.start_s:
                violations.append(
                    Violation(
                        "non_positive_duration",
                        seg.segment_id,
                        f"end_s {seg.end_s} <= start_s {seg.start_s}",
                    )
                )
            for ann in seg.annotations:
                if ann.labels and not ann.negative:
                    violations.append(
                        Violation(
                            "labels_without_negative",
                            seg.segment_id,
                            f"annotator {ann.annotator_id!r} has labels but negative=false",
                        )
                    )
            if seg.consolidated is not None:
                if seg.consolidated.cardinality > 0 and not seg.consolidated.negative:
                    violations.append(
                        Violation(
                            "labels_without_negative",
                            seg.segment_id,
                            "consolidated labels nonempty but negative=false",
                        )
                    )

    consolidated = [s for s in iter_segments(calls) if s.consolidated is not None]
    if consolidated and len(consolidated) == sum(len(c.segments) for c in calls):
        stats = compute_stats(calls)
        lhs = sum(stats.per_class_counts.values())
        rhs = sum(k * v for k, v in stats.cardinality_counts.items())
        if lhs != rhs:
            violations.append(
                Violation(
                    "count_identity",
                    "corpus",
                    f"sum of per-class counts {lhs} != sum of k*cardinality_counts {rhs}",
                )
            )
    return violations


# --- corpus cache (canonical serialized form written by `emocall ingest`) ---

CACHE_FORMAT_VERSION = 1


def save_cache(calls: Sequence[Call], taxonomy: LabelTaxonomy, path: str | Path) -> None:
    """Write the consolidated corpus as a canonical, byte-stable JSON file."""
    segments = []
    for seg in iter_segments(calls):
        rec = {
            "call_id": seg.call_id,
            "segment_id": seg.segment_id,
            "audio_path": seg.audio_ref,
            "start_s": seg.start_s,
            "end_s": seg.end_s,
            "sample_rate": seg.sample_rate,
            "transcript": seg.transcript,
            "annotations": [
                {
                    "annotator_id": a.annotator_id,
                    "negative": a.negative,
                    "labels": sorted(a.labels),
                }
                for a in seg.annotations
            ],
        }
        if seg.consolidated is not None:
            rec["consolidated"] = {
                "negative": seg.consolidated.negative,
                "multi_hot": list(seg.consolidated.multi_hot),
            }
        segments.append(rec)
    doc = {
        "format_version": CACHE_FORMAT_VERSION,
        "taxonomy": list(taxonomy.names),
        "segments": segments,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, ensure_ascii=False), encoding="utf-8")


def load_cache(path: str | Path) -> tuple[list[Call], LabelTaxonomy]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != CACHE_FORMAT_VERSION:
        raise ValueError(f"unsupported corpus cache version {doc.get('format_version')!r}")
    taxonomy = LabelTaxonomy(tuple(doc["taxonomy"]))
    by_call: dict[str, list[Segment]] = {}
    for rec in doc["segments"]:
        cons = None
        if "consolidated" in rec:
            cons = ConsolidatedLabel(
                negative=rec["consolidated"]["negative"],
                multi_hot=tuple(rec["consolidated"]["multi_hot"]),
            )
        seg = Segment(
            call_id=rec["call_id"],
            segment_id=rec["segment_id"],
            audio_ref=rec["audio_path"],
            start_s=rec["start_s"],
            end_s=rec["end_s"],
            sample_rate=rec["sample_rate"],
            annotations=tuple(
                AnnotatorLabels(a["annotator_id"], a["negative"], frozenset(a["labels"]))
                for a in rec["annotations"]
            ),
            consolidated=cons,
            transcript=rec.get("transcript"),
        )
        by_call.setdefault(seg.call_id, []).append(seg)
    calls = [
        Call(call_id=cid, segments=tuple(sorted(by_call[cid], key=lambda s: (s.start_s, s.segment_id))))
        for cid in sorted(by_call)
    ]
    return calls, taxonomy


def render_stats(stats: CorpusStats, taxonomy: LabelTaxonomy) -> str:
    """Aligned-column console rendering of corpus statistics."""
    lines = []
    lines.append(f"Calls: {stats.call_count}   Segments: {stats.segment_count}")
    lines.append(
        f"Negative: {stats.negative_count}   Non-negative: {stats.non_negative_count}"
    )
    lines.append("")
    name_w = max((len(n) for n in taxonomy.names), default=4) + 4
    lines.append(f"{'Category':<{name_w}}Segments")
    for i, name in enumerate(taxonomy.names, start=1):
        lines.append(f"{f'{i}. {name}':<{name_w}}{stats.per_class_counts.get(i, 0)}")
    lines.append("")
    lines.append(f"{'Labels':<{name_w}}Segments")
    for k, count in sorted(stats.cardinality_counts.items()):
        lines.append(f"{str(k):<{name_w}}{count}")
    lines.append("")
    lines.append(f"{'Duration':<{name_w}}Segments")
    for label in DURATION_BUCKET_LABELS:
        lines.append(f"{label:<{name_w}}{stats.duration_histogram.get(label, 0)}")
    lines.append("")
    lines.append(
        f"Mean duration: {stats.mean_duration_s:.2f} s   Max duration: {stats.max_duration_s:.2f} s"
    )
    return "\n".join(lines)
