"""Audio-to-embedding pipeline: preprocessing, encoder adapters, pooling.

An encoder adapter turns a mono waveform into a T x D frame-feature matrix.
Adapters are resolved by ``encoder_id`` from a preset registry. The ``mock``
adapter is a deterministic test double requiring no checkpoints; real
pre-trained presets load lazily and raise :class:`EncoderUnavailableError`
when their checkpoint or backend is missing, never falling back silently.

Audio longer than an encoder's window budget is cut into consecutive
non-overlapping windows, each encoded independently, and the frame
sequences concatenated before pooling, so no audio content is dropped
from the temporal mean.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .corpus import Segment


class EncoderUnavailableError(RuntimeError):
    """An encoder backend or checkpoint could not be loaded."""


@dataclass(frozen=True)
class Waveform:
    """Mono or multi-channel audio in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.samples.size == 0:
            raise ValueError("waveform must be nonempty")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")


@dataclass(frozen=True)
class FrameFeatures:
    """Encoder output: frames[t] is the D-dim feature of frame t."""

    frames: np.ndarray
    frame_hop_s: float

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ValueError(f"frames must be a T x D matrix with T,D >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frame features contain non-finite entries")


@dataclass(frozen=True)
class PooledFeature:
    """Fixed-size utterance embedding; every entry in (-1, 1)."""

    vector: np.ndarray


@dataclass(frozen=True)
class EncoderSpec:
    """Resolved description of an encoder preset."""

    encoder_id: str
    feature_dim: int
    max_window_s: float = 30.0
    target_sample_rate: int = 16000
    pooling: str = "mean_then_tanh"  # or "tanh_then_mean"

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.max_window_s <= 0:
            raise ValueError("max_window_s must be > 0")
        if self.pooling not in ("mean_then_tanh", "tanh_then_mean"):
            raise ValueError(f"unknown pooling order {self.pooling!r}")


# Registry of known presets. Dims are the encoders' final hidden sizes;
# adapters feed the final hidden state sequence downstream.
ENCODER_PRESETS: dict[str, EncoderSpec] = {
    "mock": EncoderSpec("mock", feature_dim=16),
    "wav2vec2-zh": EncoderSpec("wav2vec2-zh", feature_dim=1024),
    "hubert-base": EncoderSpec("hubert-base", feature_dim=768),
    "whisper-small": EncoderSpec("whisper-small", feature_dim=768),
    "whisper-small-zh": EncoderSpec("whisper-small-zh", feature_dim=768),
    "whisper-medium": EncoderSpec("whisper-medium", feature_dim=1024),
    "whisper-large-v3": EncoderSpec("whisper-large-v3", feature_dim=1280),
}

_HF_CHECKPOINTS = {
    "wav2vec2-zh": "jonatasgrosman/wav2vec2-large-xlsr-53-chinese-zh-cn",
    "hubert-base": "facebook/hubert-base-ls960",
    "whisper-small": "openai/whisper-small",
    "whisper-small-zh": "xmzhu/whisper-small-zh",
    "whisper-medium": "openai/whisper-medium",
    "whisper-large-v3": "openai/whisper-large-v3",
}

MOCK_HOP_S = 0.02


def get_spec(encoder_id: str) -> EncoderSpec:
    try:
        return ENCODER_PRESETS[encoder_id]
    except KeyError:
        known = ", ".join(sorted(ENCODER_PRESETS))
        raise EncoderUnavailableError(
            f"unknown encoder {encoder_id!r}; known presets: {known}"
        ) from None


class EncoderAdapter(Protocol):
    """Encodes one preprocessed window of audio into frame features."""

    def encode_window(self, samples: np.ndarray, sample_rate: int) -> np.ndarray: ...

    @property
    def frame_hop_s(self) -> float: ...


class MockEncoder:
    """Deterministic, checkpoint-free test double.

    Splits the window into 20 ms hops; frame t's feature is the hop's mean
    absolute amplitude routed to coordinate ``t mod D`` (scaled by D so the
    temporal mean of a coordinate recovers that phase's amplitude). Equal
    inputs produce bit-equal outputs across processes.
    """

    def __init__(self, spec: EncoderSpec):
        self.spec = spec

    @property
    def frame_hop_s(self) -> float:
        return MOCK_HOP_S

    def encode_window(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        hop = max(1, int(round(MOCK_HOP_S * sample_rate)))
        n = len(samples)
        n_frames = max(1, -(-n // hop))
        dim = self.spec.feature_dim
        padded = np.zeros(n_frames * hop, dtype=np.float64)
        padded[:n] = np.abs(samples)
        amps = padded.reshape(n_frames, hop).sum(axis=1)
        # partial final hop averages over its real samples only
        counts = np.full(n_frames, hop, dtype=np.float64)
        if n % hop:
            counts[-1] = n % hop
        t = np.arange(n_frames)
        frames = np.zeros((n_frames, dim), dtype=np.float64)
        frames[t, t % dim] = dim * amps / counts
        return frames


class _HuggingFaceEncoder:
    """Adapter over a transformers checkpoint (final hidden state sequence)."""

    def __init__(self, spec: EncoderSpec, checkpoint: str):
        self.spec = spec
        self.checkpoint = checkpoint
        try:
            import torch  # noqa: F401
            import transformers
        except ImportError as exc:
            raise EncoderUnavailableError(
                f"encoder {spec.encoder_id!r} needs the optional 'encoders' extra "
                f"(torch + transformers): {exc}"
            ) from None
        try:
            if spec.encoder_id.startswith("whisper"):
                self._processor = transformers.WhisperFeatureExtractor.from_pretrained(checkpoint)
                self._model = transformers.WhisperModel.from_pretrained(checkpoint).encoder
                self._hop_s = 0.02
            else:
                self._processor = None
                self._model = transformers.AutoModel.from_pretrained(checkpoint)
                self._hop_s = 0.02
            self._model.eval()
        except Exception as exc:
            raise EncoderUnavailableError(
                f"encoder {spec.encoder_id!r}: checkpoint {checkpoint!r} unavailable ({exc})"
            ) from None

    @property
    def frame_hop_s(self) -> float:
        return self._hop_s

    def encode_window(self, samples: np.ndarray, sample_rate: int) -> np.ndarray:
        import torch

        with torch.no_grad():
            if self._processor is not None:
                inputs = self._processor(
                    samples, sampling_rate=sample_rate, return_tensors="pt"
                )
                out = self._model(inputs.input_features).last_hidden_state
            else:
                x = torch.as_tensor(samples, dtype=torch.float32).unsqueeze(0)
                out = self._model(x).last_hidden_state
        return out.squeeze(0).numpy().astype(np.float64)


_ADAPTER_CACHE: dict[str, EncoderAdapter] = {}


def get_adapter(spec: EncoderSpec) -> EncoderAdapter:
    """Resolve (and memoize) the adapter instance for a preset.

    Adapter instances may hold mutable state; share one per worker or
    serialize calls externally.
    """
    if spec.encoder_id in _ADAPTER_CACHE:
        return _ADAPTER_CACHE[spec.encoder_id]
    if spec.encoder_id == "mock":
        adapter: EncoderAdapter = MockEncoder(spec)
    elif spec.encoder_id in _HF_CHECKPOINTS:
        adapter = _HuggingFaceEncoder(spec, _HF_CHECKPOINTS[spec.encoder_id])
    else:
        known = ", ".join(sorted(ENCODER_PRESETS))
        raise EncoderUnavailableError(
            f"no adapter for encoder {spec.encoder_id!r}; known presets: {known}"
        )
    _ADAPTER_CACHE[spec.encoder_id] = adapter
    return adapter


def preprocess(w: Waveform, spec: EncoderSpec) -> Waveform:
    """Mix down to mono and resample to the encoder's target rate.

    Returns the input unchanged when it is already mono at the target rate.
    Resampling uses polyphase filtering; output is clipped to [-1, 1] to
    absorb filter overshoot.
    """
    samples = np.asarray(w.samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("cannot preprocess empty audio")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise ValueError(f"expected 1-D or 2-D samples, got shape {samples.shape}")
    if w.sample_rate != spec.target_sample_rate:
        from scipy.signal import resample_poly

        frac = Fraction(spec.target_sample_rate, w.sample_rate)
        samples = resample_poly(samples, frac.numerator, frac.denominator)
        samples = np.clip(samples, -1.0, 1.0)
    if samples is w.samples:
        return w
    return Waveform(samples=samples, sample_rate=spec.target_sample_rate)


def encode(w: Waveform, spec: EncoderSpec) -> FrameFeatures:
    """Encode a preprocessed waveform into frame features.

    Audio longer than ``spec.max_window_s`` is processed as consecutive
    non-overlapping windows whose frame sequences are concatenated.
    """
    if w.sample_rate != spec.target_sample_rate:
        raise ValueError(
            f"waveform at {w.sample_rate} Hz; encoder {spec.encoder_id!r} expects "
            f"{spec.target_sample_rate} Hz (run preprocess first)"
        )
    adapter = get_adapter(spec)
    samples = np.asarray(w.samples, dtype=np.float64)
    window = int(round(spec.max_window_s * spec.target_sample_rate))
    chunks = [samples[i : i + window] for i in range(0, len(samples), window)]
    parts = [adapter.encode_window(chunk, w.sample_rate) for chunk in chunks]
    frames = np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]
    if frames.shape[1] != spec.feature_dim:
        raise EncoderUnavailableError(
            f"encoder {spec.encoder_id!r} produced dim {frames.shape[1]}, "
            f"preset declares {spec.feature_dim}"
        )
    return FrameFeatures(frames=frames, frame_hop_s=adapter.frame_hop_s)


def num_windows(duration_s: float, spec: EncoderSpec) -> int:
    """How many encoder windows a clip of the given duration occupies."""
    n = int(round(duration_s * spec.target_sample_rate))
    window = int(round(spec.max_window_s * spec.target_sample_rate))
    return max(1, -(-n // window))


def pool(f: FrameFeatures, order: str = "mean_then_tanh") -> PooledFeature:
    """Collapse frame features into one utterance embedding.

    Default: average over time, then tanh elementwise (a single bounded
    nonlinearity on the utterance vector). ``tanh_then_mean`` applies tanh
    per frame before averaging, exposed for ablation. Both are
    permutation-invariant over frames.
    """
    if order == "mean_then_tanh":
        vec = np.tanh(f.frames.mean(axis=0))
    elif order == "tanh_then_mean":
        vec = np.tanh(f.frames).mean(axis=0)
    else:
        raise ValueError(f"unknown pooling order {order!r}")
    return PooledFeature(vector=vec)


def read_wav(path: str | Path) -> Waveform:
    """Read a WAV file into a [-1, 1] float waveform (any PCM/float width)."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        scale = float(max(-np.iinfo(data.dtype).min, np.iinfo(data.dtype).max))
        samples = data.astype(np.float64) / scale
    else:
        samples = data.astype(np.float64)
    return Waveform(samples=np.clip(samples, -1.0, 1.0), sample_rate=int(rate))


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a waveform as 16-bit PCM WAV."""
    from scipy.io import wavfile

    samples = np.clip(np.asarray(w.samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, w.sample_rate, (samples * 32767.0).astype(np.int16))


def segment_waveform(seg: Segment, audio_root: str | Path | None = None) -> Waveform:
    """Load the audio slice [start_s, end_s) of a segment from its WAV file."""
    path = Path(seg.audio_ref)
    if audio_root is not None and not path.is_absolute():
        path = Path(audio_root) / path
    w = read_wav(path)
    lo = int(round(seg.start_s * w.sample_rate))
    hi = int(round(seg.end_s * w.sample_rate))
    samples = np.atleast_1d(w.samples)[lo:hi]
    if samples.size == 0:
        raise ValueError(
            f"segment {seg.segment_id!r}: audio slice [{seg.start_s}, {seg.end_s})s is empty"
        )
    return Waveform(samples=samples, sample_rate=w.sample_rate)


AudioProvider = Callable[[Segment], Waveform]


class FeatureExtractor:
    """Pooled-feature pipeline with an optional on-disk cache.

    Cache entries are keyed by (segment_id, encoder_id); one ``.npy`` file
    per segment under ``cache_dir/<encoder_id>/``.
    """

    def __init__(
        self,
        spec: EncoderSpec,
        audio_provider: AudioProvider | None = None,
        cache_dir: str | Path | None = None,
    ):
        self.spec = spec
        self.audio_provider = audio_provider or segment_waveform
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None

    def _cache_path(self, segment_id: str) -> Path | None:
        if self.cache_dir is None:
            return None
        subdir = self.spec.encoder_id
        if self.spec.pooling != "mean_then_tanh":  # alternate orders get their own keyspace
            subdir = f"{subdir}-{self.spec.pooling}"
        digest = hashlib.sha1(segment_id.encode("utf-8")).hexdigest()
        return self.cache_dir / subdir / f"{digest}.npy"

    def pooled(self, seg: Segment) -> np.ndarray:
        path = self._cache_path(seg.segment_id)
        if path is not None and path.exists():
            return np.load(path)
        w = preprocess(self.audio_provider(seg), self.spec)
        vec = pool(encode(w, self.spec), order=self.spec.pooling).vector
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, vec)
        return vec

    def pooled_matrix(self, segments: Sequence[Segment]) -> np.ndarray:
        """Stack pooled features for a list of segments into an N x D matrix."""
        if not segments:
            return np.zeros((0, self.spec.feature_dim), dtype=np.float64)
        return np.stack([self.pooled(seg) for seg in segments])
