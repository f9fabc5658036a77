"""Deployment-style walkthrough through the command-line interface.

Renders a synthetic corpus to disk (WAV files + JSONL manifest + taxonomy),
then drives the full CLI pipeline in-process: ingest -> stats -> split ->
train -> eval -> predict, ending with the per-call emotion timeline a
hotline integration would consume.

Writes roughly 100 MB of WAV audio to a temp directory and takes about a
minute end to end.
"""

import json
import tempfile
from pathlib import Path

from emocall import cli
from emocall.encoding import get_spec
from emocall.synthetic import (
    SyntheticConfig,
    make_corpus,
    write_corpus_files,
    write_segmentation,
)

root = Path(tempfile.mkdtemp(prefix="emocall_demo_"))
print(f"working directory: {root}")

spec = get_spec("mock")
corpus = make_corpus(
    SyntheticConfig(n_calls=105, segments_per_call=60, min_duration_s=0.5,
                    max_duration_s=1.0, seed=9),
    spec,
)
manifest, taxonomy = write_corpus_files(corpus, root / "data")
out = root / "runs"

steps = [
    ["ingest", "--manifest", str(manifest), "--taxonomy", str(taxonomy),
     "--check-audio", "--out", str(out)],
    ["stats", "--cache", str(out / "corpus_cache.json"), "--out", str(out)],
    ["split", "--cache", str(out / "corpus_cache.json"), "--ratio", "4:1",
     "--folds", "5", "--seed", "7", "--out", str(out)],
    ["train", "--cache", str(out / "corpus_cache.json"),
     "--plan", str(out / "split_plan.json"), "--task", "fine",
     "--encoder", "mock", "--epochs", "6", "--hidden-dim", "512",
     "--seed", "7", "--out", str(out)],
    ["eval", "--artifact", str(out / "model_fine_mock.head"),
     "--cache", str(out / "corpus_cache.json"),
     "--plan", str(out / "split_plan.json"), "--role", "test", "--out", str(out)],
]
for argv in steps:
    print(f"\n$ emocall {' '.join(argv)}")
    rc = cli.main(argv)
    assert rc == 0, f"step failed: {argv[0]}"

# Timeline for one held-out call.
call = corpus.calls[0]
segmentation = write_segmentation(call, root / "segmentation.json")
timeline_path = root / "timeline.json"
argv = [
    "predict", "--audio", str(root / "data" / "audio" / f"{call.call_id}.wav"),
    "--segments", str(segmentation), "--artifact", str(out / "model_fine_mock.head"),
    "--timeline", str(timeline_path), "--out", str(out),
]
print(f"\n$ emocall {' '.join(argv)}")
assert cli.main(argv) == 0

entries = json.loads(timeline_path.read_text())
print(f"\nemotion timeline for {call.call_id} ({len(entries)} segments):")
for entry in entries[:6]:
    labels = ", ".join(entry["predicted_labels"]) or "none"
    print(
        f"  {entry['start_s']:7.2f}-{entry['end_s']:7.2f}s  "
        f"p(negative)={entry['negative_probability']:.2f}  [{labels}]"
    )
