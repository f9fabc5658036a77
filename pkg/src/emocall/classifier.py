"""Classification head: two linear layers with dropout, losses, decisions.

The head maps a pooled utterance embedding to task logits:

    dropout -> dense + tanh -> dropout -> linear

Two task modes share the architecture. ``binary`` scores two classes
(non-negative vs negative emotion) trained with softmax cross-entropy and
decided by argmax; ``fine_grained`` scores 11 emotion categories trained
with per-class sigmoid binary cross-entropy and decided by thresholding
each class probability, so the predicted label set may be empty.

Everything is plain float64 numpy with hand-written backprop; gradients are
exact (verified against central finite differences in the test suite).
forward/loss/decide are pure given explicit rng seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import NUM_CLASSES, ConsolidatedLabel

BINARY = "binary"
FINE = "fine_grained"

ARTIFACT_MAGIC = b"EMOCALLHEAD"
ARTIFACT_VERSION = 1


class ArtifactError(ValueError):
    """Raised when a model artifact is malformed or incompatible."""


@dataclass(frozen=True)
class HeadConfig:
    input_dim: int
    hidden_dim: int
    dropout_p: float = 0.1
    task: str = BINARY

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dims must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.task not in (BINARY, FINE):
            raise ValueError(f"task must be {BINARY!r} or {FINE!r}, got {self.task!r}")

    @property
    def num_outputs(self) -> int:
        return 2 if self.task == BINARY else NUM_CLASSES


@dataclass
class HeadParameters:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def check_shapes(self, cfg: HeadConfig) -> None:
        expect = {
            "W1": (cfg.hidden_dim, cfg.input_dim),
            "b1": (cfg.hidden_dim,),
            "W2": (cfg.num_outputs, cfg.hidden_dim),
            "b2": (cfg.num_outputs,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    def copy(self) -> "HeadParameters":
        return HeadParameters(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray
    binary_label: bool | None = None
    label_set: frozenset[int] | None = None


def init_params(cfg: HeadConfig, seed: int) -> HeadParameters:
    """Seeded uniform init in +-1/sqrt(fan_in); biases start at zero."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x1217])))
    w1 = rng.uniform(-1.0, 1.0, (cfg.hidden_dim, cfg.input_dim)) / np.sqrt(cfg.input_dim)
    w2 = rng.uniform(-1.0, 1.0, (cfg.num_outputs, cfg.hidden_dim)) / np.sqrt(cfg.hidden_dim)
    return HeadParameters(
        W1=w1,
        b1=np.zeros(cfg.hidden_dim),
        W2=w2,
        b2=np.zeros(cfg.num_outputs),
    )


def _as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("train-mode forward with dropout_p > 0 needs an rng")
    return np.random.Generator(np.random.PCG64(rng))


def _forward_cached(
    X: np.ndarray,
    params: HeadParameters,
    cfg: HeadConfig,
    train: bool,
    rng: np.random.Generator | int | None,
):
    """Forward pass keeping intermediates (and dropout masks) for backprop."""
    dropout = train and cfg.dropout_p > 0.0
    if dropout:
        gen = _as_generator(rng)
        keep = 1.0 - cfg.dropout_p
        m0 = (gen.random(X.shape) < keep) / keep
        z0 = X * m0
    else:
        m0 = None
        z0 = X
    a = z0 @ params.W1.T + params.b1
    h = np.tanh(a)
    if dropout:
        keep = 1.0 - cfg.dropout_p
        m1 = (gen.random(h.shape) < keep) / keep
        z1 = h * m1
    else:
        m1 = None
        z1 = h
    logits = z1 @ params.W2.T + params.b2
    return logits, (z0, h, z1, m0, m1)


def forward(
    x: np.ndarray,
    params: HeadParameters,
    cfg: HeadConfig,
    mode: str = "eval",
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Compute logits for one embedding (D,) or a batch (B, D).

    Accepts a raw array or a PooledFeature. In "eval" mode dropout is the
    identity; "train" mode applies the two seeded dropout layers. Same
    seed, same mask, same logits.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    params.check_shapes(cfg)
    if hasattr(x, "vector"):
        x = x.vector
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != cfg.input_dim:
        raise ValueError(f"input dim {X.shape[1]} != config input_dim {cfg.input_dim}")
    logits, _ = _forward_cached(X, params, cfg, train=(mode == "train"), rng=rng)
    return logits[0] if single else logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits, dtype=np.float64)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ez = np.exp(logits[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def targets_from_labels(labels: Sequence[ConsolidatedLabel], task: str) -> np.ndarray:
    """Ground-truth array for a task: (B,) class indices or (B, 11) multi-hot."""
    if task == BINARY:
        return np.array([1 if lab.negative else 0 for lab in labels], dtype=np.int64)
    return np.array([lab.multi_hot for lab in labels], dtype=np.float64)


def loss(logits: np.ndarray, target: ConsolidatedLabel, cfg: HeadConfig) -> float:
    """Loss of one prediction against one consolidated label."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = targets_from_labels([target], cfg.task)
    return float(_loss_from_logits(np.atleast_2d(logits), targets, cfg.task)[0])


def _loss_from_logits(logits: np.ndarray, targets: np.ndarray, task: str):
    """Mean loss over the batch and d(loss)/d(logits)."""
    n = logits.shape[0]
    if task == BINARY:
        probs = _softmax(logits)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        log_probs = shifted - log_z[:, None]
        value = -log_probs[np.arange(n), targets].mean()
        grad = probs
        grad[np.arange(n), targets] -= 1.0
        grad /= n
        return value, grad
    # fine-grained: mean over classes of per-class BCE, then mean over batch
    k = logits.shape[1]
    per = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    value = per.mean(axis=1).mean()
    grad = (_sigmoid(logits) - targets) / (n * k)
    return value, grad


def loss_and_grads(
    X: np.ndarray,
    targets: np.ndarray,
    params: HeadParameters,
    cfg: HeadConfig,
    train: bool = True,
    rng: np.random.Generator | int | None = None,
) -> tuple[float, HeadParameters]:
    """Batch loss and exact gradients w.r.t. all head parameters.

    Returns gradients packed in a HeadParameters with matching shapes.
    """
    params.check_shapes(cfg)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    logits, (z0, h, z1, m0, m1) = _forward_cached(X, params, cfg, train=train, rng=rng)
    value, g = _loss_from_logits(logits, targets, cfg.task)
    d_w2 = g.T @ z1
    d_b2 = g.sum(axis=0)
    d_z1 = g @ params.W2
    if m1 is not None:
        d_z1 = d_z1 * m1
    d_a = d_z1 * (1.0 - h * h)
    d_w1 = d_a.T @ z0
    d_b1 = d_a.sum(axis=0)
    return value, HeadParameters(W1=d_w1, b1=d_b1, W2=d_w2, b2=d_b2)


def decide(logits: np.ndarray, cfg: HeadConfig, threshold: float = 0.5) -> Prediction:
    """Turn logits into a decision.

    Binary: argmax class (invariant to shifting all logits). Fine-grained:
    every class whose sigmoid probability exceeds the threshold; the
    resulting label set may be empty.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (cfg.num_outputs,):
        raise ValueError(f"logits shape {logits.shape} != ({cfg.num_outputs},)")
    if cfg.task == BINARY:
        probs = _softmax(logits)
        return Prediction(
            logits=logits,
            probabilities=probs,
            binary_label=bool(np.argmax(logits) == 1),
        )
    probs = _sigmoid(logits)
    label_set = frozenset(int(i) + 1 for i in np.flatnonzero(probs > threshold))
    return Prediction(logits=logits, probabilities=probs, label_set=label_set)


def decide_batch(
    logits: np.ndarray, cfg: HeadConfig, threshold: float = 0.5
) -> list[Prediction]:
    return [decide(row, cfg, threshold) for row in np.atleast_2d(logits)]


# --- model artifact -------------------------------------------------------

_ARRAY_ORDER = ("W1", "b1", "W2", "b2")


@dataclass
class HeadArtifact:
    """A trained head plus everything needed to apply it consistently."""

    cfg: HeadConfig
    params: HeadParameters
    encoder_id: str
    pooling: str
    taxonomy_names: tuple[str, ...]
    taxonomy_fingerprint: str
    threshold: float = 0.5


def save_head(artifact: HeadArtifact, path: str | Path) -> None:
    """Write a versioned artifact: JSON header + little-endian float64 arrays."""
    artifact.params.check_shapes(artifact.cfg)
    header = {
        "format_version": ARTIFACT_VERSION,
        "task": artifact.cfg.task,
        "input_dim": artifact.cfg.input_dim,
        "hidden_dim": artifact.cfg.hidden_dim,
        "dropout_p": artifact.cfg.dropout_p,
        "num_outputs": artifact.cfg.num_outputs,
        "encoder_id": artifact.encoder_id,
        "pooling": artifact.pooling,
        "taxonomy": list(artifact.taxonomy_names),
        "taxonomy_fingerprint": artifact.taxonomy_fingerprint,
        "threshold": artifact.threshold,
        "dtype": "<f8",
        "arrays": [
            {"name": name, "shape": list(getattr(artifact.params, name).shape)}
            for name in _ARRAY_ORDER
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARTIFACT_MAGIC)
        fh.write(ARTIFACT_VERSION.to_bytes(2, "little"))
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in _ARRAY_ORDER:
            fh.write(np.ascontiguousarray(getattr(artifact.params, name), dtype="<f8").tobytes())


def load_head(path: str | Path) -> HeadArtifact:
    data = Path(path).read_bytes()
    if not data.startswith(ARTIFACT_MAGIC):
        raise ArtifactError(f"{path}: not a head artifact (bad magic)")
    off = len(ARTIFACT_MAGIC)
    version = int.from_bytes(data[off : off + 2], "little")
    if version != ARTIFACT_VERSION:
        raise ArtifactError(f"{path}: unsupported artifact version {version}")
    off += 2
    header_len = int.from_bytes(data[off : off + 8], "little")
    off += 8
    header = json.loads(data[off : off + header_len].decode("utf-8"))
    off += header_len
    cfg = HeadConfig(
        input_dim=header["input_dim"],
        hidden_dim=header["hidden_dim"],
        dropout_p=header["dropout_p"],
        task=header["task"],
    )
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arrays[spec["name"]] = (
            np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(shape).copy()
        )
        off += nbytes
    if off != len(data):
        raise ArtifactError(f"{path}: trailing bytes after parameter arrays")
    params = HeadParameters(**{name: arrays[name] for name in _ARRAY_ORDER})
    params.check_shapes(cfg)
    return HeadArtifact(
        cfg=cfg,
        params=params,
        encoder_id=header["encoder_id"],
        pooling=header["pooling"],
        taxonomy_names=tuple(header["taxonomy"]),
        taxonomy_fingerprint=header["taxonomy_fingerprint"],
        threshold=header["threshold"],
    )
