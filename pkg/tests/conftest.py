"""Shared fixtures: mock encoder spec and synthetic corpora at two scales.

The large corpus (105 calls x 120 segments) is what the end-to-end
learnability checks train on; it is session-scoped and shares one
disk-cached feature extractor so folds and tasks never re-encode audio.
"""

from __future__ import annotations

import pytest

from emocall import encoding, splitting
from emocall.synthetic import SyntheticConfig, make_corpus


@pytest.fixture(scope="session")
def mock_spec():
    return encoding.get_spec("mock")


@pytest.fixture(scope="session")
def big_corpus(mock_spec):
    cfg = SyntheticConfig(n_calls=105, segments_per_call=120, seed=11)
    return make_corpus(cfg, mock_spec)


@pytest.fixture(scope="session")
def big_plan(big_corpus):
    plan = splitting.holdout_split(big_corpus.calls, (4, 1), seed=7)
    return splitting.assign_folds(plan, 5)


@pytest.fixture(scope="session")
def big_extractor(big_corpus, mock_spec, tmp_path_factory):
    cache_dir = tmp_path_factory.mktemp("feature_cache")
    return encoding.FeatureExtractor(
        mock_spec, audio_provider=big_corpus.waveform, cache_dir=cache_dir
    )


@pytest.fixture(scope="session")
def small_corpus(mock_spec):
    cfg = SyntheticConfig(n_calls=15, segments_per_call=20, seed=5)
    return make_corpus(cfg, mock_spec)
