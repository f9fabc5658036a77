"""Command-line pipeline: ingest, stats, split, train, cv, eval, predict, report.

Every run writes a manifest (command, config snapshot, input/artifact
hashes, timestamps) into the output directory, so runs are auditable and
idempotence is checkable by comparing artifact hashes. All randomness
flows from the single ``--seed`` flag. Diagnostics go to stderr; tables
and prediction output go to stdout. Exit code 0 iff no fatal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    BINARY,
    FINE,
    ArtifactError,
    decide,
    forward,
    load_head,
)
from .corpus import (
    LabelTaxonomy,
    ManifestError,
    compute_stats,
    consolidate_calls,
    load_cache,
    load_manifest,
    render_stats,
    save_cache,
    validate_corpus,
)
from .encoding import (
    EncoderUnavailableError,
    FeatureExtractor,
    encode,
    get_spec,
    pool,
    preprocess,
    read_wav,
    segment_waveform,
    Waveform,
)
from .evaluation import (
    MetricsReport,
    error_report,
    render_error_report,
    render_metrics,
)
from .splitting import SplitPlan, assign_folds, holdout_split, materialize
from .training import (
    LeakageError,
    TrainConfig,
    append_run_record,
    cross_validate,
    evaluate_head,
    finalize,
)

TASKS = {"binary": BINARY, "fine": FINE}

# TrainConfig and encoder fields settable from the key-value config file.
_CONFIG_KEYS = {
    "batch_size": int,
    "learning_rate": float,
    "grad_accum_steps": int,
    "epochs": int,
    "precision": str,
    "optimizer": str,
    "hidden_dim": int,
    "dropout_p": float,
    "threshold": float,
    "encoder": str,
    "pooling": str,
}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(
    out_dir: Path,
    command: str,
    config_snapshot: dict,
    inputs: dict[str, str],
    artifacts: list[Path],
    started_at: float,
) -> None:
    doc = {
        "command": command,
        "config": config_snapshot,
        "input_hashes": {name: _sha256(Path(p)) for name, p in inputs.items()},
        "artifacts": [{"path": str(p), "sha256": _sha256(p)} for p in artifacts],
        "started_at": started_at,
        "finished_at": time.time(),
        "version": __version__,
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a simple ``key = value`` config file (# starts a comment)."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _build_train_config(args) -> tuple[TrainConfig, str, str | None]:
    """Merge defaults, config file, and CLI flags (flags win)."""
    merged: dict = {}
    encoder_id = "mock"
    pooling = None
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key not in _CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            value = _CONFIG_KEYS[key](raw)
            if key == "encoder":
                encoder_id = value
            elif key == "pooling":
                pooling = value
            else:
                merged[key] = value
    for key in _CONFIG_KEYS:
        if key in ("encoder", "pooling"):
            continue
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    if getattr(args, "encoder", None):
        encoder_id = args.encoder
    if getattr(args, "pooling", None):
        pooling = args.pooling
    merged["seed"] = args.seed
    return TrainConfig(**merged), encoder_id, pooling


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_ingest(args) -> int:
    started = time.time()
    out = _out_dir(args)
    taxonomy = LabelTaxonomy.from_file(args.taxonomy)
    calls = load_manifest(args.manifest, taxonomy, check_audio=args.check_audio)
    calls = consolidate_calls(calls)
    violations = validate_corpus(calls)
    for v in violations:
        _progress(f"violation [{v.code}] {v.where}: {v.message}")
    cache_path = out / "corpus_cache.json"
    save_cache(calls, taxonomy, cache_path)
    _progress(
        f"ingested {sum(len(c.segments) for c in calls)} segments in {len(calls)} calls "
        f"({len(violations)} violations) -> {cache_path}"
    )
    _write_run_manifest(
        out,
        "ingest",
        {"check_audio": args.check_audio, "seed": args.seed},
        {"manifest": args.manifest, "taxonomy": args.taxonomy},
        [cache_path],
        started,
    )
    return 0


def cmd_stats(args) -> int:
    started = time.time()
    out = _out_dir(args)
    calls, taxonomy = load_cache(args.cache)
    stats = compute_stats(calls)
    stats_path = out / "corpus_stats.json"
    stats_path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    print(render_stats(stats, taxonomy))
    _write_run_manifest(
        out, "stats", {"seed": args.seed}, {"cache": args.cache}, [stats_path], started
    )
    return 0


def _parse_ratio(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ValueError(f"ratio must look like '4:1', got {text!r}")
    return int(parts[0]), int(parts[1])


def cmd_split(args) -> int:
    started = time.time()
    out = _out_dir(args)
    calls, _ = load_cache(args.cache)
    plan = holdout_split(calls, _parse_ratio(args.ratio), args.seed)
    if args.folds:
        plan = assign_folds(plan, args.folds)
    plan_path = out / "split_plan.json"
    plan.save(plan_path)
    _progress(
        f"split {len(plan.train_calls)} train / {len(plan.test_calls)} test calls"
        + (f", {plan.num_folds} folds" if plan.folds else "")
        + f" -> {plan_path}"
    )
    _write_run_manifest(
        out,
        "split",
        {"ratio": args.ratio, "folds": args.folds, "seed": args.seed},
        {"cache": args.cache},
        [plan_path],
        started,
    )
    return 0


def _extractor_for(args, encoder_id: str, out: Path, pooling: str | None = None) -> FeatureExtractor:
    spec = get_spec(encoder_id)
    if pooling and pooling != spec.pooling:
        spec = dataclasses.replace(spec, pooling=pooling)
    audio_root = Path(args.audio_root) if getattr(args, "audio_root", None) else None
    provider = lambda seg: segment_waveform(seg, audio_root)  # noqa: E731
    return FeatureExtractor(spec, audio_provider=provider, cache_dir=out / "features")


def cmd_train(args) -> int:
    started = time.time()
    out = _out_dir(args)
    cfg, encoder_id = _build_train_config(args)
    calls, taxonomy = load_cache(args.cache)
    plan = SplitPlan.load(args.plan)
    task = TASKS[args.task]
    extractor = _extractor_for(args, encoder_id, out)
    artifact_path = out / f"model_{args.task}_{encoder_id}.head"
    _progress(f"training task={args.task} encoder={encoder_id} on {len(plan.train_calls)} calls")
    record, test_metrics = finalize(
        plan,
        calls,
        extractor.spec,
        cfg,
        task=task,
        artifact_path=artifact_path,
        extractor=extractor,
        taxonomy=taxonomy,
    )
    metrics_path = out / f"metrics_{args.task}_test.json"
    test_metrics.save(metrics_path)
    log_path = out / "run_log.jsonl"
    append_run_record(log_path, record)
    print(render_metrics(test_metrics, model_name=f"{encoder_id}/{args.task}"))
    _write_run_manifest(
        out,
        "train",
        {**dataclasses.asdict(cfg), "encoder": encoder_id, "task": args.task},
        {"cache": args.cache, "plan": args.plan},
        [artifact_path, metrics_path, log_path],
        started,
    )
    return 0


def cmd_cv(args) -> int:
    started = time.time()
    out = _out_dir(args)
    cfg, encoder_id = _build_train_config(args)
    calls, taxonomy = load_cache(args.cache)
    plan = SplitPlan.load(args.plan)
    task = TASKS[args.task]
    extractor = _extractor_for(args, encoder_id, out)
    _progress(f"cross-validating task={args.task} encoder={encoder_id} over {plan.num_folds} folds")
    summary = cross_validate(
        plan, calls, extractor.spec, cfg, task=task, extractor=extractor, taxonomy=taxonomy
    )
    log_path = out / "run_log.jsonl"
    for record in summary.records:
        append_run_record(log_path, record)
        _progress(f"{record.fold}: weighted F1 {record.val_metrics.weighted_f1:.4f}")
    summary_path = out / f"cv_summary_{args.task}.json"
    summary_path.write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    print(
        f"cv weighted F1: {summary.mean_weighted_f1:.4f} +- {summary.std_weighted_f1:.4f} "
        f"({plan.num_folds} folds)"
    )
    _write_run_manifest(
        out,
        "cv",
        {**dataclasses.asdict(cfg), "encoder": encoder_id, "task": args.task},
        {"cache": args.cache, "plan": args.plan},
        [summary_path, log_path],
        started,
    )
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    out = _out_dir(args)
    artifact = load_head(args.artifact)
    calls, taxonomy = load_cache(args.cache)
    if artifact.taxonomy_fingerprint != taxonomy.fingerprint():
        raise ArtifactError(
            "taxonomy fingerprint mismatch: artifact was trained against "
            f"{artifact.taxonomy_fingerprint[:12]}..., corpus cache has "
            f"{taxonomy.fingerprint()[:12]}...; refusing to evaluate"
        )
    plan = SplitPlan.load(args.plan)
    segs = materialize(plan, calls, args.role)
    extractor = _extractor_for(args, artifact.encoder_id, out, pooling=artifact.pooling)
    threshold = args.threshold if args.threshold is not None else artifact.threshold
    report = evaluate_head(
        artifact.params, artifact.cfg, segs, extractor, threshold, taxonomy
    )
    task_name = "binary" if artifact.cfg.task == BINARY else "fine"
    metrics_path = out / f"metrics_{task_name}_{args.role}.json"
    report.save(metrics_path)
    artifacts = [metrics_path]
    print(render_metrics(report, model_name=f"{artifact.encoder_id}/{task_name}"))
    if artifact.cfg.task == FINE:
        X = extractor.pooled_matrix(segs)
        logits = forward(X, artifact.params, artifact.cfg, mode="eval")
        preds = [decide(row, artifact.cfg, threshold) for row in np.atleast_2d(logits)]
        records = error_report(
            preds, [s.consolidated for s in segs], segs, limit=args.limit, taxonomy=taxonomy
        )
        errors_path = out / f"error_report_{args.role}.tsv"
        errors_path.write_text(render_error_report(records), encoding="utf-8")
        artifacts.append(errors_path)
        _progress(f"wrote {len(records)} discrepancies -> {errors_path}")
    _write_run_manifest(
        out,
        "eval",
        {"role": args.role, "threshold": threshold, "seed": args.seed},
        {"artifact": args.artifact, "cache": args.cache, "plan": args.plan},
        artifacts,
        started,
    )
    return 0


def _load_segmentation(path: str | Path) -> list[dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, list) or not doc:
        raise ValueError("segmentation file must be a nonempty JSON array")
    spans = []
    for i, rec in enumerate(doc):
        if isinstance(rec, dict):
            start_s, end_s = float(rec["start_s"]), float(rec["end_s"])
            seg_id = rec.get("segment_id")
        else:
            start_s, end_s = float(rec[0]), float(rec[1])
            seg_id = None
        if end_s <= start_s:
            raise ValueError(f"segmentation entry {i}: end_s {end_s} <= start_s {start_s}")
        spans.append({"segment_id": seg_id, "start_s": start_s, "end_s": end_s})
    spans.sort(key=lambda rec: rec["start_s"])
    for i, rec in enumerate(spans):
        if rec["segment_id"] is None:
            rec["segment_id"] = f"seg-{i:04d}"
    return spans


def cmd_predict(args) -> int:
    started = time.time()
    out = _out_dir(args)
    artifact = load_head(args.artifact)
    spec = get_spec(artifact.encoder_id)
    if spec.feature_dim != artifact.cfg.input_dim:
        raise ArtifactError(
            f"artifact expects dim {artifact.cfg.input_dim}, encoder preset "
            f"{artifact.encoder_id!r} emits {spec.feature_dim}"
        )
    if artifact.pooling != spec.pooling:
        spec = dataclasses.replace(spec, pooling=artifact.pooling)
    threshold = args.threshold if args.threshold is not None else artifact.threshold
    wav = read_wav(args.audio)
    spans = _load_segmentation(args.segments)
    taxonomy_names = artifact.taxonomy_names
    entries = []
    for span in spans:
        lo = int(round(span["start_s"] * wav.sample_rate))
        hi = int(round(span["end_s"] * wav.sample_rate))
        samples = np.atleast_1d(wav.samples)[lo:hi]
        if samples.size == 0:
            raise ValueError(
                f"segment {span['segment_id']}: audio slice "
                f"[{span['start_s']}, {span['end_s']})s is empty"
            )
        w = preprocess(Waveform(samples=samples, sample_rate=wav.sample_rate), spec)
        vec = pool(encode(w, spec), order=spec.pooling).vector
        logits = forward(vec, artifact.params, artifact.cfg, mode="eval")
        pred = decide(logits, artifact.cfg, threshold)
        if artifact.cfg.task == FINE:
            class_probs = {
                name: float(p) for name, p in zip(taxonomy_names, pred.probabilities)
            }
            negative_probability = float(pred.probabilities.max())
            predicted = [taxonomy_names[i - 1] for i in sorted(pred.label_set)]
        else:
            class_probs = None
            negative_probability = float(pred.probabilities[1])
            predicted = ["negative"] if pred.binary_label else []
        entries.append(
            {
                "segment_id": span["segment_id"],
                "start_s": span["start_s"],
                "end_s": span["end_s"],
                "negative_probability": negative_probability,
                "class_probabilities": class_probs,
                "predicted_labels": predicted,
            }
        )
    entries.sort(key=lambda e: e["start_s"])
    payload = json.dumps(entries, indent=2)
    artifacts = []
    if args.timeline:
        timeline_path = Path(args.timeline)
        timeline_path.write_text(payload, encoding="utf-8")
        artifacts.append(timeline_path)
        _progress(f"wrote {len(entries)} timeline entries -> {timeline_path}")
    else:
        print(payload)
    _write_run_manifest(
        out,
        "predict",
        {"threshold": threshold, "seed": args.seed},
        {"audio": args.audio, "segments": args.segments, "artifact": args.artifact},
        artifacts,
        started,
    )
    return 0


def cmd_report(args) -> int:
    report = MetricsReport.load(args.metrics)
    print(render_metrics(report, model_name=args.model_name))
    if args.errors:
        print()
        text = Path(args.errors).read_text(encoding="utf-8").rstrip("\n")
        lines = text.splitlines()
        limit = args.limit if args.limit is not None else len(lines)
        print("\n".join(lines[: limit + 1]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--out", default="runs", help="output directory")

    parser = argparse.ArgumentParser(
        prog="emocall",
        description="Negative-emotion recognition pipeline for segmented call audio.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="validate a manifest into a corpus cache")
    p.add_argument("--manifest", required=True, help="JSONL segment manifest")
    p.add_argument("--taxonomy", required=True, help="taxonomy file (id<TAB>name)")
    p.add_argument("--check-audio", action="store_true", help="verify referenced audio files")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics tables")
    p.add_argument("--cache", required=True, help="corpus cache from `ingest`")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", parents=[common], help="call-level holdout + CV folds")
    p.add_argument("--cache", required=True)
    p.add_argument("--ratio", default="4:1", help="train:test ratio (default 4:1)")
    p.add_argument("--folds", type=int, default=0, help="number of CV folds (0 = none)")
    p.set_defaults(func=cmd_split)

    def add_train_flags(p):
        p.add_argument("--cache", required=True)
        p.add_argument("--plan", required=True, help="split plan from `split`")
        p.add_argument("--task", choices=sorted(TASKS), required=True)
        p.add_argument("--encoder", help="encoder preset (default mock)")
        p.add_argument("--audio-root", help="base dir for relative audio paths")
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--grad-accum-steps", dest="grad_accum_steps", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--precision", choices=["full", "reduced"])
        p.add_argument("--optimizer", choices=["adam", "sgd"])
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
        p.add_argument("--dropout-p", dest="dropout_p", type=float)
        p.add_argument("--threshold", type=float)

    p = sub.add_parser("train", parents=[common], help="train on all training calls, score on test")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", parents=[common], help="k-fold cross-validation on training calls")
    add_train_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", parents=[common], help="evaluate a saved model on a split role")
    p.add_argument("--artifact", required=True, help="model artifact from `train`")
    p.add_argument("--cache", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--role", default="test", help="train | test | fold-<f>-train | fold-<f>-val")
    p.add_argument("--threshold", type=float, help="override artifact decision threshold")
    p.add_argument("--limit", type=int, default=50, help="max error-report rows")
    p.add_argument("--audio-root", help="base dir for relative audio paths")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="per-call emotion timeline")
    p.add_argument("--audio", required=True, help="call WAV file")
    p.add_argument("--segments", required=True, help="JSON segmentation: (start_s, end_s) spans")
    p.add_argument("--artifact", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--timeline", help="write timeline JSON here instead of stdout")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="render saved reports as tables")
    p.add_argument("--metrics", required=True, help="metrics JSON file")
    p.add_argument("--errors", help="error-report TSV file")
    p.add_argument("--limit", type=int, help="max error rows to print")
    p.add_argument("--model-name", default="model")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        ManifestError,
        EncoderUnavailableError,
        ArtifactError,
        LeakageError,
        ValueError,
        NotImplementedError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
