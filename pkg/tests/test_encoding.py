import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emocall import encoding
from emocall.corpus import AnnotatorLabels, Segment
from emocall.encoding import (
    MOCK_HOP_S,
    EncoderSpec,
    EncoderUnavailableError,
    FeatureExtractor,
    FrameFeatures,
    Waveform,
    encode,
    get_adapter,
    get_spec,
    num_windows,
    pool,
    preprocess,
    read_wav,
    segment_waveform,
    write_wav,
)


def sine(duration_s, sample_rate, freq=440.0, amp=0.5):
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    return Waveform(samples=amp * np.sin(2 * math.pi * freq * t), sample_rate=sample_rate)


class TestPreprocess:
    def test_identity_at_target_rate(self, mock_spec):
        w = sine(1.0, 16000)
        out = preprocess(w, mock_spec)
        assert out is w

    def test_upsample_doubles_length(self, mock_spec):
        w = sine(1.0, 8000)
        out = preprocess(w, mock_spec)
        assert out.sample_rate == 16000
        assert abs(len(out.samples) - 2 * len(w.samples)) <= 1

    def test_non_integer_ratio_resample(self, mock_spec):
        w = sine(1.0, 44100)
        out = preprocess(w, mock_spec)
        assert out.sample_rate == 16000
        assert abs(len(out.samples) - 16000) <= 1

    def test_stereo_mixdown(self, mock_spec):
        mono = sine(0.5, 16000)
        stereo = Waveform(
            samples=np.stack([mono.samples, mono.samples], axis=1), sample_rate=16000
        )
        out = preprocess(stereo, mock_spec)
        assert out.samples.ndim == 1
        np.testing.assert_allclose(out.samples, mono.samples)

    def test_empty_waveform_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            Waveform(samples=np.array([]), sample_rate=16000)

    def test_amplitude_range_preserved(self, mock_spec):
        w = sine(0.25, 8000, amp=0.99)
        out = preprocess(w, mock_spec)
        assert np.max(np.abs(out.samples)) <= 1.0


class TestMockEncoder:
    def test_deterministic_bit_equal(self, mock_spec):
        w = sine(1.3, 16000)
        a = encode(w, mock_spec)
        b = encode(w, mock_spec)
        assert np.array_equal(a.frames, b.frames)

    def test_frame_is_function_of_index_and_window_amplitude(self, mock_spec):
        # two waveforms with identical per-hop mean |amplitude| but different shape
        hop = int(MOCK_HOP_S * 16000)
        constant = Waveform(samples=np.full(hop * 8, 0.25), sample_rate=16000)
        square = Waveform(
            samples=0.25 * np.where(np.arange(hop * 8) % 2 == 0, 1.0, -1.0),
            sample_rate=16000,
        )
        np.testing.assert_allclose(
            encode(constant, mock_spec).frames, encode(square, mock_spec).frames
        )

    def test_rotating_coordinate_layout(self, mock_spec):
        hop = int(MOCK_HOP_S * 16000)
        w = Waveform(samples=np.full(hop * 3, 0.5), sample_rate=16000)
        frames = encode(w, mock_spec).frames
        dim = mock_spec.feature_dim
        assert frames.shape == (3, dim)
        for t in range(3):
            assert frames[t, t % dim] == pytest.approx(dim * 0.5)
            assert np.count_nonzero(frames[t]) == 1

    def test_long_audio_windowed_and_concatenated(self, mock_spec):
        sr = mock_spec.target_sample_rate
        duration = 63.61
        w = sine(duration, sr, amp=0.4)
        assert num_windows(duration, mock_spec) == 3
        frames = encode(w, mock_spec).frames
        hop = int(round(MOCK_HOP_S * sr))
        window = int(round(mock_spec.max_window_s * sr))
        expected = 0
        remaining = len(w.samples)
        while remaining > 0:
            chunk = min(window, remaining)
            expected += max(1, math.ceil(chunk / hop))
            remaining -= chunk
        assert frames.shape == (expected, mock_spec.feature_dim)

    def test_wrong_sample_rate_rejected(self, mock_spec):
        with pytest.raises(ValueError, match="preprocess"):
            encode(sine(1.0, 8000), mock_spec)

    def test_window_count_boundaries(self, mock_spec):
        assert num_windows(29.99, mock_spec) == 1
        assert num_windows(30.0, mock_spec) == 1
        assert num_windows(30.02, mock_spec) == 2
        assert num_windows(60.0, mock_spec) == 2
        assert num_windows(0.01, mock_spec) == 1

    def test_bit_equal_across_processes(self, mock_spec):
        import subprocess
        import sys

        script = (
            "import hashlib, numpy as np\n"
            "from emocall.encoding import Waveform, encode, get_spec\n"
            "t = np.arange(16000) / 16000.0\n"
            "w = Waveform(samples=0.33 * np.sin(2 * np.pi * 97 * t), sample_rate=16000)\n"
            "frames = encode(w, get_spec('mock')).frames\n"
            "print(hashlib.sha256(frames.tobytes()).hexdigest())\n"
        )
        digests = {
            subprocess.run(
                [sys.executable, "-c", script], capture_output=True, text=True, check=True
            ).stdout.strip()
            for _ in range(2)
        }
        assert len(digests) == 1


class TestPresets:
    def test_all_named_presets_exist(self):
        for encoder_id in (
            "wav2vec2-zh",
            "hubert-base",
            "whisper-small",
            "whisper-small-zh",
            "whisper-medium",
            "whisper-large-v3",
            "mock",
        ):
            assert get_spec(encoder_id).encoder_id == encoder_id

    def test_unknown_preset_error_names_id(self):
        with pytest.raises(EncoderUnavailableError, match="no-such-encoder"):
            get_spec("no-such-encoder")

    def test_missing_checkpoint_error_names_encoder(self, monkeypatch):
        # force offline resolution so the failure is fast and deterministic
        monkeypatch.setenv("HF_HUB_OFFLINE", "1")
        monkeypatch.setenv("TRANSFORMERS_OFFLINE", "1")
        monkeypatch.delitem(encoding._ADAPTER_CACHE, "hubert-base", raising=False)
        with pytest.raises(EncoderUnavailableError, match="hubert-base"):
            get_adapter(get_spec("hubert-base"))


class TestPool:
    def test_constant_frames(self):
        f = FrameFeatures(frames=np.full((5, 3), 0.7), frame_hop_s=0.02)
        np.testing.assert_allclose(pool(f).vector, np.tanh(0.7))

    def test_zero_frames_zero_vector(self):
        f = FrameFeatures(frames=np.zeros((4, 2)), frame_hop_s=0.02)
        assert np.array_equal(pool(f).vector, np.zeros(2))

    def test_two_frame_hand_value(self):
        a, b = 0.3, -1.7
        f = FrameFeatures(frames=np.array([[a], [b]]), frame_hop_s=0.02)
        assert pool(f).vector[0] == pytest.approx(math.tanh((a + b) / 2), abs=1e-15)

    def test_order_switch(self):
        frames = np.array([[0.5], [2.0]])
        f = FrameFeatures(frames=frames, frame_hop_s=0.02)
        alt = pool(f, order="tanh_then_mean").vector[0]
        assert alt == pytest.approx((math.tanh(0.5) + math.tanh(2.0)) / 2)
        assert alt != pool(f).vector[0]

    @given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariant(self, t, d, seed):
        rng = np.random.default_rng(seed)
        frames = rng.normal(0, 2.0, (t, d))
        f = FrameFeatures(frames=frames, frame_hop_s=0.02)
        shuffled = FrameFeatures(frames=frames[rng.permutation(t)], frame_hop_s=0.02)
        np.testing.assert_allclose(pool(f).vector, pool(shuffled).vector, atol=1e-12)

    @given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_output_strictly_inside_unit_ball(self, t, d, seed):
        rng = np.random.default_rng(seed)
        frames = rng.normal(0, 4.0, (t, d))
        vec = pool(FrameFeatures(frames=frames, frame_hop_s=0.02)).vector
        assert np.max(np.abs(vec)) < 1.0

    def test_output_bounded_at_float64_saturation(self):
        # tanh rounds to 1.0 in float64 beyond ~19; bound still holds weakly
        f = FrameFeatures(frames=np.full((2, 2), 1e6), frame_hop_s=0.02)
        assert np.max(np.abs(pool(f).vector)) <= 1.0


def make_segment(call_id, segment_id, audio_ref, start, end):
    return Segment(
        call_id=call_id,
        segment_id=segment_id,
        audio_ref=str(audio_ref),
        start_s=start,
        end_s=end,
        sample_rate=16000,
        annotations=(AnnotatorLabels("a1", False, frozenset()),),
    )


class TestWavAndSegments:
    def test_wav_round_trip(self, tmp_path):
        w = sine(0.5, 16000, amp=0.8)
        path = tmp_path / "t.wav"
        write_wav(path, w)
        back = read_wav(path)
        assert back.sample_rate == 16000
        np.testing.assert_allclose(back.samples, w.samples, atol=1e-4)

    def test_segment_slice(self, tmp_path):
        sr = 16000
        samples = np.concatenate([np.full(sr, 0.2), np.full(sr, 0.8)])
        path = tmp_path / "call.wav"
        write_wav(path, Waveform(samples=samples, sample_rate=sr))
        seg = make_segment("c1", "s1", path, 1.0, 2.0)
        w = segment_waveform(seg)
        assert len(w.samples) == sr
        assert np.mean(np.abs(w.samples)) == pytest.approx(0.8, abs=1e-3)

    def test_empty_slice_rejected(self, tmp_path):
        path = tmp_path / "call.wav"
        write_wav(path, sine(0.5, 16000))
        seg = make_segment("c1", "s1", path, 2.0, 3.0)
        with pytest.raises(ValueError, match="empty"):
            segment_waveform(seg)


class TestFeatureCache:
    def test_cache_hit_skips_recompute(self, tmp_path, mock_spec):
        calls = {"s1": 0}

        def provider(seg):
            calls["s1"] += 1
            return sine(0.5, 16000)

        seg = make_segment("c1", "s1", "unused.wav", 0.0, 0.5)
        ext = FeatureExtractor(mock_spec, audio_provider=provider, cache_dir=tmp_path)
        first = ext.pooled(seg)
        second = ext.pooled(seg)
        assert calls["s1"] == 1
        np.testing.assert_array_equal(first, second)

    def test_cache_keys_include_encoder_id(self, tmp_path, mock_spec):
        other = EncoderSpec("mock2", feature_dim=4)
        seg = make_segment("c1", "s1", "unused.wav", 0.0, 0.5)
        for spec in (mock_spec, other):
            ext = FeatureExtractor(spec, audio_provider=lambda s: sine(0.5, 16000),
                                   cache_dir=tmp_path)
            if spec.encoder_id == "mock":
                ext.pooled(seg)
        assert (tmp_path / "mock").exists()
        assert not (tmp_path / "mock2").exists()

    def test_cache_separates_pooling_orders(self, tmp_path, mock_spec):
        import dataclasses

        seg = make_segment("c1", "s1", "unused.wav", 0.0, 0.5)
        default = FeatureExtractor(mock_spec, audio_provider=lambda s: sine(0.5, 16000),
                                   cache_dir=tmp_path)
        alt_spec = dataclasses.replace(mock_spec, pooling="tanh_then_mean")
        alt = FeatureExtractor(alt_spec, audio_provider=lambda s: sine(0.5, 16000),
                               cache_dir=tmp_path)
        a = default.pooled(seg)
        b = alt.pooled(seg)
        assert not np.allclose(a, b)
        assert (tmp_path / "mock").exists()
        assert (tmp_path / "mock-tanh_then_mean").exists()

    def test_pooled_matrix_shape(self, tmp_path, mock_spec):
        segs = [make_segment("c1", f"s{i}", "unused.wav", 0.0, 0.5) for i in range(3)]
        ext = FeatureExtractor(mock_spec, audio_provider=lambda s: sine(0.5, 16000))
        X = ext.pooled_matrix(segs)
        assert X.shape == (3, mock_spec.feature_dim)
        assert ext.pooled_matrix([]).shape == (0, mock_spec.feature_dim)
