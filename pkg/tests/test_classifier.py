import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emocall.classifier import (
    BINARY,
    FINE,
    ArtifactError,
    HeadArtifact,
    HeadConfig,
    HeadParameters,
    decide,
    decide_batch,
    forward,
    init_params,
    load_head,
    loss,
    loss_and_grads,
    save_head,
    targets_from_labels,
)
from emocall.corpus import ConsolidatedLabel, LabelTaxonomy
from oracles import central_difference_grads, relative_error


def label(ids=(), negative=None):
    negative = bool(ids) if negative is None else negative
    return ConsolidatedLabel(
        negative=negative,
        multi_hot=tuple(1 if i in set(ids) else 0 for i in range(1, 12)),
    )


def zero_params(cfg):
    return HeadParameters(
        W1=np.zeros((cfg.hidden_dim, cfg.input_dim)),
        b1=np.zeros(cfg.hidden_dim),
        W2=np.zeros((cfg.num_outputs, cfg.hidden_dim)),
        b2=np.zeros(cfg.num_outputs),
    )


class TestForward:
    def test_zero_params_zero_logits(self):
        cfg = HeadConfig(input_dim=4, hidden_dim=3, task=BINARY)
        out = forward(np.ones(4), zero_params(cfg), cfg, mode="eval")
        assert np.array_equal(out, np.zeros(2))

    def test_eval_equals_train_with_zero_dropout(self):
        cfg = HeadConfig(input_dim=5, hidden_dim=4, dropout_p=0.0, task=FINE)
        params = init_params(cfg, seed=1)
        x = np.linspace(-0.5, 0.5, 5)
        np.testing.assert_array_equal(
            forward(x, params, cfg, mode="eval"),
            forward(x, params, cfg, mode="train"),
        )

    def test_hand_evaluated_single_unit(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        params = HeadParameters(
            W1=np.array([[1.0]]),
            b1=np.array([0.0]),
            W2=np.array([[2.0], [0.0]]),
            b2=np.array([0.5, 0.0]),
        )
        out = forward(np.array([0.0]), params, cfg, mode="eval")
        assert out[0] == 0.5  # 2*tanh(0) + 0.5
        assert out[1] == 0.0

    def test_tanh_nonlinearity_in_path(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        params = HeadParameters(
            W1=np.array([[1.0]]),
            b1=np.array([0.0]),
            W2=np.array([[1.0], [0.0]]),
            b2=np.array([0.0, 0.0]),
        )
        out = forward(np.array([3.0]), params, cfg, mode="eval")
        assert out[0] == pytest.approx(math.tanh(3.0))

    def test_batch_matches_single_rows(self):
        cfg = HeadConfig(input_dim=3, hidden_dim=4, task=FINE)
        params = init_params(cfg, seed=2)
        X = np.random.default_rng(0).normal(size=(6, 3))
        batch = forward(X, params, cfg, mode="eval")
        for i in range(6):
            # gemm vs gemv accumulation orders differ in the last ulp
            np.testing.assert_allclose(
                batch[i], forward(X[i], params, cfg, mode="eval"), rtol=1e-13
            )

    def test_dropout_reproducible_with_seed(self):
        cfg = HeadConfig(input_dim=8, hidden_dim=8, dropout_p=0.5, task=BINARY)
        params = init_params(cfg, seed=3)
        x = np.ones(8)
        a = forward(x, params, cfg, mode="train", rng=42)
        b = forward(x, params, cfg, mode="train", rng=42)
        c = forward(x, params, cfg, mode="train", rng=43)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_shape_mismatch_rejected(self):
        cfg = HeadConfig(input_dim=4, hidden_dim=3, task=BINARY)
        with pytest.raises(ValueError, match="input dim"):
            forward(np.ones(5), zero_params(cfg), cfg)

    def test_accepts_pooled_feature(self):
        from emocall.encoding import PooledFeature

        cfg = HeadConfig(input_dim=3, hidden_dim=2, task=BINARY)
        params = init_params(cfg, seed=0)
        vec = np.array([0.1, -0.2, 0.3])
        np.testing.assert_array_equal(
            forward(PooledFeature(vector=vec), params, cfg),
            forward(vec, params, cfg),
        )

    def test_init_deterministic(self):
        cfg = HeadConfig(input_dim=6, hidden_dim=5, task=FINE)
        a, b = init_params(cfg, seed=9), init_params(cfg, seed=9)
        for k in ("W1", "b1", "W2", "b2"):
            np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
        assert np.max(np.abs(a.W1)) <= 1 / math.sqrt(6)


class TestLoss:
    def test_binary_uniform_logits_ln2(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        value = loss(np.zeros(2), label((), negative=False), cfg)
        assert value == pytest.approx(math.log(2), abs=1e-12)

    def test_fine_zero_logits_empty_target_ln2(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=FINE)
        value = loss(np.zeros(11), label(()), cfg)
        assert value == pytest.approx(math.log(2), abs=1e-12)

    def test_loss_nonnegative_and_decreases_with_confidence(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        truth = label((1,), negative=True)  # class 1
        confident = loss(np.array([-5.0, 5.0]), truth, cfg)
        uncertain = loss(np.array([0.0, 0.0]), truth, cfg)
        wrong = loss(np.array([5.0, -5.0]), truth, cfg)
        assert 0 <= confident < uncertain < wrong


def _loss_fn(X, targets, cfg, train=False, rng=None):
    def fn(arrays):
        params = HeadParameters(**arrays)
        value, _ = loss_and_grads(X, targets, params, cfg, train=train, rng=rng)
        return value

    return fn


class TestGradients:
    @pytest.mark.parametrize("task", [BINARY, FINE])
    def test_matches_central_differences(self, task):
        rng = np.random.default_rng(7 if task == BINARY else 8)
        cfg = HeadConfig(input_dim=4, hidden_dim=3, dropout_p=0.0, task=task)
        params = init_params(cfg, seed=5)
        X = rng.normal(0, 0.8, (6, 4))
        labels = [label(tuple(np.flatnonzero(rng.random(11) < 0.3) + 1)) for _ in range(6)]
        targets = targets_from_labels(labels, task)
        _, grads = loss_and_grads(X, targets, params, cfg, train=False)
        fd = central_difference_grads(_loss_fn(X, targets, cfg), params.arrays())
        for name in ("W1", "b1", "W2", "b2"):
            assert relative_error(getattr(grads, name), fd[name]) < 1e-4

    def test_matches_through_fixed_dropout_mask(self):
        # the same integer seed regenerates the same mask on every call,
        # so finite differences see a fixed, differentiable function
        cfg = HeadConfig(input_dim=5, hidden_dim=4, dropout_p=0.4, task=FINE)
        params = init_params(cfg, seed=6)
        rng = np.random.default_rng(11)
        X = rng.normal(0, 0.5, (4, 5))
        targets = targets_from_labels([label((1, 3)) for _ in range(4)], FINE)
        _, grads = loss_and_grads(X, targets, params, cfg, train=True, rng=123)
        fd = central_difference_grads(
            _loss_fn(X, targets, cfg, train=True, rng=123), params.arrays()
        )
        for name in ("W1", "b1", "W2", "b2"):
            assert relative_error(getattr(grads, name), fd[name]) < 1e-4


class TestDecide:
    def test_fine_zero_logits_empty_set(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=FINE)
        pred = decide(np.zeros(11), cfg, threshold=0.5)
        assert pred.label_set == frozenset()
        assert pred.binary_label is None
        np.testing.assert_allclose(pred.probabilities, 0.5)

    def test_binary_argmax(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        pred = decide(np.array([1.0, -1.0]), cfg)
        assert pred.binary_label is False  # class 0 wins
        assert pred.label_set is None
        pred = decide(np.array([-0.2, 0.1]), cfg)
        assert pred.binary_label is True

    def test_fine_single_positive_logit(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=FINE)
        logits = np.full(11, -2.0)
        logits[6] = 1.5
        assert decide(logits, cfg).label_set == {7}

    def test_threshold_bounds(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=FINE)
        with pytest.raises(ValueError, match="threshold"):
            decide(np.zeros(11), cfg, threshold=1.0)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-50, 50))
    @settings(max_examples=60, deadline=None)
    def test_binary_shift_invariance(self, a, b, shift):
        if abs(a - b) < 1e-9:  # ties can flip when the gap is below shift rounding
            return
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        logits = np.array([a, b])
        assert (
            decide(logits, cfg).binary_label
            == decide(logits + shift, cfg).binary_label
        )

    @given(
        st.lists(st.floats(-4, 4), min_size=11, max_size=11),
        st.integers(0, 10),
        st.floats(0.01, 3.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_fine_monotone_in_each_logit(self, logits, idx, bump):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=FINE)
        base = np.array(logits)
        raised = base.copy()
        raised[idx] += bump
        before = decide(base, cfg).label_set
        after = decide(raised, cfg).label_set
        assert before - {idx + 1} <= after

    def test_decide_batch(self):
        cfg = HeadConfig(input_dim=1, hidden_dim=1, task=BINARY)
        preds = decide_batch(np.array([[1.0, 0.0], [0.0, 1.0]]), cfg)
        assert [p.binary_label for p in preds] == [False, True]


class TestArtifact:
    def make_artifact(self, task=FINE, seed=0):
        tax = LabelTaxonomy.default()
        cfg = HeadConfig(input_dim=16, hidden_dim=8, dropout_p=0.2, task=task)
        return HeadArtifact(
            cfg=cfg,
            params=init_params(cfg, seed=seed),
            encoder_id="mock",
            pooling="mean_then_tanh",
            taxonomy_names=tax.names,
            taxonomy_fingerprint=tax.fingerprint(),
            threshold=0.4,
        )

    def test_round_trip_identical_logits(self, tmp_path):
        artifact = self.make_artifact()
        path = tmp_path / "model.head"
        save_head(artifact, path)
        loaded = load_head(path)
        assert loaded.cfg == artifact.cfg
        assert loaded.encoder_id == "mock"
        assert loaded.threshold == 0.4
        assert loaded.taxonomy_fingerprint == artifact.taxonomy_fingerprint
        probe = np.random.default_rng(3).normal(size=(10, 16))
        np.testing.assert_array_equal(
            forward(probe, artifact.params, artifact.cfg),
            forward(probe, loaded.params, loaded.cfg),
        )

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.head"
        path.write_bytes(b"not a model")
        with pytest.raises(ArtifactError, match="magic"):
            load_head(path)

    def test_truncated_rejected(self, tmp_path):
        artifact = self.make_artifact()
        path = tmp_path / "model.head"
        save_head(artifact, path)
        data = path.read_bytes()
        path.write_bytes(data + b"\x00")
        with pytest.raises(ArtifactError, match="trailing"):
            load_head(path)

    def test_save_is_byte_deterministic(self, tmp_path):
        artifact = self.make_artifact(seed=4)
        a, b = tmp_path / "a.head", tmp_path / "b.head"
        save_head(artifact, a)
        save_head(artifact, b)
        assert a.read_bytes() == b.read_bytes()
