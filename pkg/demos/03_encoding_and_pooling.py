"""Encoder adapters and pooling walkthrough.

Runs the mock encoder over synthetic audio: preprocessing (resampling),
windowed encoding of a long clip, and the pooling step that collapses
frame features into a bounded utterance embedding (temporal mean, then
tanh).
"""

import numpy as np

from emocall.encoding import (
    ENCODER_PRESETS,
    FrameFeatures,
    Waveform,
    encode,
    get_spec,
    num_windows,
    pool,
    preprocess,
)

spec = get_spec("mock")
print("known encoder presets:")
for name, preset in sorted(ENCODER_PRESETS.items()):
    print(f"  {name:<18} dim={preset.feature_dim:<5} window={preset.max_window_s:.0f}s")

# Resampling: an 8 kHz clip is brought to the encoder's 16 kHz target.
t = np.arange(8000) / 8000.0
clip = Waveform(samples=0.5 * np.sin(2 * np.pi * 300 * t), sample_rate=8000)
prepped = preprocess(clip, spec)
print(f"\npreprocess: {clip.sample_rate} Hz x{len(clip.samples)} -> "
      f"{prepped.sample_rate} Hz x{len(prepped.samples)}")

# Windowing: a 63.61 s clip exceeds the 30 s window budget, so it is encoded
# as three independent windows whose frames are concatenated.
long_t = np.arange(int(63.61 * 16000)) / 16000.0
long_clip = Waveform(samples=0.4 * np.sin(2 * np.pi * 200 * long_t), sample_rate=16000)
frames = encode(long_clip, spec)
print(f"\n63.61 s clip -> {num_windows(63.61, spec)} windows, "
      f"{frames.frames.shape[0]} frames of dim {frames.frames.shape[1]}")

# Pooling: average over time then tanh. The embedding is permutation
# invariant over frames and strictly inside (-1, 1).
vec = pool(frames).vector
rng = np.random.default_rng(0)
shuffled = FrameFeatures(
    frames=frames.frames[rng.permutation(frames.frames.shape[0])],
    frame_hop_s=frames.frame_hop_s,
)
print(f"\npooled embedding (first 4 dims): {np.round(vec[:4], 6)}")
print(f"max |coordinate|: {np.max(np.abs(vec)):.6f} (< 1)")
print(f"shuffle-invariant: {np.allclose(vec, pool(shuffled).vector, atol=1e-12)}")

# Two frames of a 1-dim feature: pool([a], [b]) == tanh((a + b) / 2).
a, b = 0.6, -1.4
two = FrameFeatures(frames=np.array([[a], [b]]), frame_hop_s=0.02)
print(f"\npool([[{a}], [{b}]]) = {pool(two).vector[0]:.6f} "
      f"== tanh((a+b)/2) = {np.tanh((a + b) / 2):.6f}")
