"""Synthetic call corpus whose audio encodes its own labels.

Each segment's waveform is a Nyquist-frequency square wave whose amplitude
changes every encoder hop: block j carries amplitude ``hi`` when bit
``j mod D`` of the segment's code is set and ``lo`` otherwise. Bits 0..10
are the fine-grained labels, bit 11 is the negative flag. Pooled through
the mock encoder, each coordinate of the utterance embedding recovers one
bit, which makes the corpus cleanly separable for both tasks; it is
the end-to-end yardstick for the training pipeline.

A configurable fraction of segments get one stored label flipped relative
to the audio (annotation noise); audio always encodes the original code.
Everything is a pure function of the config seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import (
    NUM_CLASSES,
    AnnotatorLabels,
    Call,
    LabelTaxonomy,
    Segment,
    consolidate_calls,
)
from .encoding import MOCK_HOP_S, EncoderSpec, Waveform, write_wav

GAP_S = 0.1  # silence between segments in a rendered call file


@dataclass(frozen=True)
class SyntheticConfig:
    n_calls: int = 105
    segments_per_call: int = 120
    negative_rate: float = 0.65
    class_rate: float = 0.35  # per-class Bernoulli rate inside negative segments
    no_label_negative_rate: float = 0.02  # negative segments with no fine label
    label_noise: float = 0.02  # fraction of segments with one stored label flipped
    min_duration_s: float = 1.0
    max_duration_s: float = 3.0
    hi: float = 0.9
    lo: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class _SegmentCode:
    """True bit pattern baked into a segment's audio."""

    labels: frozenset[int]
    negative: bool
    n_blocks: int


@dataclass
class SyntheticCorpus:
    calls: list[Call]
    taxonomy: LabelTaxonomy
    spec: EncoderSpec
    config: SyntheticConfig
    codes: dict[str, _SegmentCode] = field(default_factory=dict)

    def waveform(self, seg: Segment) -> Waveform:
        """Deterministic audio provider for the pipeline's feature extractor."""
        code = self.codes[seg.segment_id]
        return Waveform(
            samples=_render(code, self.spec, self.config),
            sample_rate=self.spec.target_sample_rate,
        )


def _render(code: _SegmentCode, spec: EncoderSpec, cfg: SyntheticConfig) -> np.ndarray:
    hop = int(round(MOCK_HOP_S * spec.target_sample_rate))
    dim = spec.feature_dim
    bits = np.full(dim, cfg.lo)
    for lab in code.labels:
        bits[lab - 1] = cfg.hi
    if code.negative and dim > NUM_CLASSES:
        bits[NUM_CLASSES] = cfg.hi
    amps = bits[np.arange(code.n_blocks) % dim]
    samples = np.repeat(amps, hop)
    signs = np.where(np.arange(len(samples)) % 2 == 0, 1.0, -1.0)
    return samples * signs


def make_corpus(cfg: SyntheticConfig, spec: EncoderSpec) -> SyntheticCorpus:
    """Generate a consolidated synthetic corpus for the given encoder preset."""
    if spec.feature_dim <= NUM_CLASSES:
        raise ValueError(
            f"encoder feature_dim must exceed {NUM_CLASSES} to carry the negative bit"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0x57A7])))
    hop_s = MOCK_HOP_S
    calls = []
    codes: dict[str, _SegmentCode] = {}
    for c in range(cfg.n_calls):
        call_id = f"call-{c:04d}"
        segments = []
        cursor = 0.0
        for s in range(cfg.segments_per_call):
            negative = bool(rng.random() < cfg.negative_rate)
            labels: set[int] = set()
            if negative and rng.random() >= cfg.no_label_negative_rate:
                while not labels:
                    labels = {
                        int(i) + 1 for i in np.flatnonzero(rng.random(NUM_CLASSES) < cfg.class_rate)
                    }
            duration = rng.uniform(cfg.min_duration_s, cfg.max_duration_s)
            n_blocks = max(1, int(round(duration / hop_s)))
            segment_id = f"{call_id}-seg-{s:03d}"
            codes[segment_id] = _SegmentCode(
                labels=frozenset(labels), negative=negative, n_blocks=n_blocks
            )

            stored = set(labels)
            stored_negative = negative
            if rng.random() < cfg.label_noise:
                flip = int(rng.integers(1, NUM_CLASSES + 1))
                stored ^= {flip}
                stored_negative = stored_negative or bool(stored)

            start_s = cursor
            end_s = cursor + n_blocks * hop_s
            cursor = end_s + GAP_S
            segments.append(
                Segment(
                    call_id=call_id,
                    segment_id=segment_id,
                    audio_ref=f"{call_id}.wav",
                    start_s=round(start_s, 6),
                    end_s=round(end_s, 6),
                    sample_rate=spec.target_sample_rate,
                    annotations=_spread_annotations(stored, stored_negative, rng),
                )
            )
        calls.append(Call(call_id=call_id, segments=tuple(segments)))
    corpus = SyntheticCorpus(
        calls=consolidate_calls(calls),
        taxonomy=LabelTaxonomy.default(),
        spec=spec,
        config=cfg,
        codes=codes,
    )
    return corpus


def _spread_annotations(
    labels: set[int], negative: bool, rng: np.random.Generator
) -> tuple[AnnotatorLabels, ...]:
    """Split a label set across 1-3 annotators so that union re-yields it."""
    n_ann = int(rng.integers(1, 4))
    buckets: list[set[int]] = [set() for _ in range(n_ann)]
    for lab in sorted(labels):
        buckets[int(rng.integers(0, n_ann))].add(lab)
    anns = []
    for i, bucket in enumerate(buckets):
        flag = bool(bucket) or (negative and i == 0)
        anns.append(
            AnnotatorLabels(annotator_id=f"ann-{i+1}", negative=flag, labels=frozenset(bucket))
        )
    return tuple(anns)


def write_corpus_files(corpus: SyntheticCorpus, out_dir: str | Path) -> tuple[Path, Path]:
    """Render the corpus to disk: one WAV per call, a JSONL manifest, and a
    taxonomy file. Returns (manifest_path, taxonomy_path)."""
    import json

    out = Path(out_dir)
    audio_dir = out / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    sr = corpus.spec.target_sample_rate
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for call in corpus.calls:
            rendered = [
                (int(round(seg.start_s * sr)), corpus.waveform(seg).samples)
                for seg in call.segments
            ]
            total = max(lo + len(w) for lo, w in rendered)
            samples = np.zeros(total, dtype=np.float64)
            for lo, w in rendered:
                samples[lo : lo + len(w)] = w
            wav_path = audio_dir / f"{call.call_id}.wav"
            write_wav(wav_path, Waveform(samples=samples, sample_rate=sr))
            for seg in call.segments:
                rec = {
                    "call_id": seg.call_id,
                    "segment_id": seg.segment_id,
                    "audio_path": str(wav_path),
                    "start_s": seg.start_s,
                    "end_s": seg.end_s,
                    "sample_rate": seg.sample_rate,
                    "annotations": [
                        {
                            "annotator_id": a.annotator_id,
                            "negative": a.negative,
                            "labels": sorted(a.labels),
                        }
                        for a in seg.annotations
                    ],
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    taxonomy_path = out / "taxonomy.tsv"
    corpus.taxonomy.to_file(taxonomy_path)
    return manifest_path, taxonomy_path


def write_segmentation(call: Call, path: str | Path) -> Path:
    """Write the (start_s, end_s) pairs of one call for `emocall predict`."""
    import json

    doc = [
        {"segment_id": seg.segment_id, "start_s": seg.start_s, "end_s": seg.end_s}
        for seg in call.segments
    ]
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return Path(path)
