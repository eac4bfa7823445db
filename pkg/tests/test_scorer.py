import numpy as np
import pytest
from helpers import REL_TOL, fd_gradcheck, min_preactivation

from svdrank.scorer import (CheckpointError, ScorerParameters, forward,
                            forward_batch, gradients, init_conv_pool,
                            init_pooled_fc, load_checkpoint, save_checkpoint,
                            score_inputs)


class TestInit:
    def test_pooled_deterministic(self):
        a = init_pooled_fc(rng_seed=3)
        b = init_pooled_fc(rng_seed=3)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_conv_deterministic(self):
        a = init_conv_pool(rng_seed=3)
        b = init_conv_pool(rng_seed=3)
        for name in a.tensors:
            np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_xavier_variance(self):
        # 768*256 samples: the sample variance concentrates well within 10%
        # of 2/(768+256) (3-sigma relative width is about 1%).
        params = init_pooled_fc(768, 256, rng_seed=0)
        target = 2.0 / (768 + 256)
        assert abs(params.tensors["fc1_w"].var() - target) <= 0.1 * target

    def test_biases_exactly_zero(self):
        for params in (init_pooled_fc(rng_seed=1), init_conv_pool(rng_seed=1)):
            for name, arr in params.tensors.items():
                if name.endswith("_b"):
                    assert np.all(arr == 0.0), name

    def test_shapes(self):
        p = init_pooled_fc(12, 5, rng_seed=0)
        assert p.tensors["fc1_w"].shape == (12, 5)
        assert p.tensors["fc2_w"].shape == (5,)
        c = init_conv_pool(rng_seed=0)
        assert c.tensors["conv1_w"].shape == (3, 257, 16)
        assert c.tensors["conv3_w"].shape == (3, 32, 64)
        assert c.tensors["fc1_w"].shape == (64, 32)

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            init_pooled_fc(0, 4)


class TestForward:
    def test_zero_params_zero_score(self):
        params = init_pooled_fc(4, 3, rng_seed=0)
        for name in params.tensors:
            params.tensors[name] = np.zeros_like(params.tensors[name])
        assert forward(params, np.array([1.0, -2.0, 3.0, 4.0])).score == 0.0

    def test_eval_deterministic(self):
        params = init_pooled_fc(6, 4, rng_seed=1)
        x = np.random.default_rng(0).normal(size=6)
        assert forward(params, x).score == forward(params, x).score

    def test_hand_computed_single_layer(self):
        # Degenerate net: 2 -> 1 hidden unit with w = [1, 2], b = 0.5 and an
        # identity read-out gives 1*1 + 2*1 + 0.5 = 3.5.
        params = ScorerParameters("pooled_fc", {
            "fc1_w": np.array([[1.0], [2.0]]),
            "fc1_b": np.array([0.5]),
            "fc2_w": np.array([1.0]),
            "fc2_b": np.zeros(1),
        })
        assert forward(params, np.array([1.0, 1.0])).score == pytest.approx(3.5)

    def test_shape_mismatch_rejected(self):
        params = init_pooled_fc(4, 3, rng_seed=0)
        with pytest.raises(ValueError):
            forward(params, np.zeros(5))
        conv = init_conv_pool(rng_seed=0)
        with pytest.raises(ValueError):
            forward(conv, np.zeros((4, 128)))

    def test_train_mode_requires_rng(self):
        params = init_pooled_fc(4, 3, rng_seed=0)
        with pytest.raises(ValueError, match="RNG"):
            forward(params, np.zeros(4), mode="train")

    def test_conv_single_frame(self):
        params = init_conv_pool(rng_seed=2)
        score = forward(params, np.abs(np.random.default_rng(0).normal(size=(1, 257)))).score
        assert np.isfinite(score)

    def test_conv_duplication_invariance(self):
        # Content of 8 frames followed by 8 zero frames: after each stride-2
        # conv the seam windows match the zero-padded boundary windows (fresh
        # init keeps biases at zero), so doubling the sequence repeats the
        # pre-pool activations exactly and the pooled score is unchanged.
        params = init_conv_pool(rng_seed=5)
        rng = np.random.default_rng(6)
        content = np.abs(rng.normal(size=(8, 257))) + 0.5
        x = np.concatenate([content, np.zeros((8, 257))])
        doubled = np.concatenate([x, x])
        a = forward(params, x).score
        b = forward(params, doubled).score
        assert abs(a - b) <= 1e-12

    def test_batch_matches_singles(self):
        params = init_conv_pool(rng_seed=7)
        rng = np.random.default_rng(8)
        xs = np.abs(rng.normal(size=(5, 4, 257)))
        batch, _ = forward_batch(params, xs)
        singles = [forward(params, x).score for x in xs]
        np.testing.assert_allclose(batch, singles, atol=1e-12)

    def test_score_inputs_groups_ragged_shapes(self):
        params = init_conv_pool(rng_seed=7)
        rng = np.random.default_rng(9)
        inputs = [np.abs(rng.normal(size=(t, 257))) for t in (3, 5, 3, 2, 5)]
        scores = score_inputs(params, inputs)
        singles = [forward(params, x).score for x in inputs]
        np.testing.assert_allclose(scores, singles, atol=1e-12)


class TestDropout:
    def test_expected_train_output_matches_eval_for_linear_path(self):
        # All-positive weights and inputs keep every ReLU active, so the net
        # is linear and inverted dropout is unbiased: the mean train-mode
        # score over many masks approaches the eval score.
        rng = np.random.default_rng(10)
        params = init_pooled_fc(6, 8, rng_seed=11)
        params.tensors["fc1_w"] = np.abs(params.tensors["fc1_w"])
        params.tensors["fc2_w"] = np.abs(params.tensors["fc2_w"])
        x = np.abs(rng.normal(size=6)) + 0.1
        eval_score = forward(params, x).score
        n = 10_000
        xs = np.repeat(x[None, :], n, axis=0)
        scores, _ = forward_batch(params, xs, mode="train",
                                  dropout_rng=np.random.default_rng(12))
        sem = scores.std() / np.sqrt(n)
        assert abs(scores.mean() - eval_score) <= 3.0 * sem

    def test_same_rng_same_mask(self):
        params = init_pooled_fc(6, 8, rng_seed=11)
        x = np.random.default_rng(0).normal(size=6)
        a = forward(params, x, mode="train", dropout_rng=np.random.default_rng(5)).score
        b = forward(params, x, mode="train", dropout_rng=np.random.default_rng(5)).score
        assert a == b


class TestGradients:
    def test_zero_adjoint_zero_grads(self):
        params = init_conv_pool(rng_seed=1)
        out = forward(params, np.abs(np.random.default_rng(2).normal(size=(3, 257))))
        grads = gradients(params, 0.0, out.cache)
        for name, g in grads.items():
            assert np.all(g == 0.0), name

    def test_dead_relu_blocks_gradient(self):
        # One hidden unit, driven strictly negative: its incoming weights get
        # no gradient.
        params = ScorerParameters("pooled_fc", {
            "fc1_w": np.array([[1.0], [1.0]]),
            "fc1_b": np.array([0.0]),
            "fc2_w": np.array([2.0]),
            "fc2_b": np.zeros(1),
        })
        out = forward(params, np.array([-3.0, 1.0]))
        grads = gradients(params, 1.0, out.cache)
        assert np.all(grads["fc1_w"] == 0.0)
        assert np.all(grads["fc1_b"] == 0.0)

    def test_stale_cache_rejected(self):
        params = init_pooled_fc(4, 3, rng_seed=0)
        out = forward(params, np.zeros(4))
        other = init_pooled_fc(4, 3, rng_seed=0)
        with pytest.raises(ValueError, match="stale"):
            gradients(other, 1.0, out.cache)

    def test_pooled_fd_eval_and_train(self):
        rng = np.random.default_rng(20)
        for trial in range(4):
            params = init_pooled_fc(int(rng.integers(3, 9)), int(rng.integers(2, 7)),
                                    rng_seed=trial)
            x = rng.normal(size=params.tensors["fc1_w"].shape[0])
            for mode in ("eval", "train"):
                out = forward(params, x, mode=mode,
                              dropout_rng=np.random.default_rng(trial))
                if min_preactivation(out.cache) < 1e-2:
                    continue
                worst, checked = fd_gradcheck(params, x, mode=mode, dropout_seed=trial)
                assert checked > 0
                assert worst < REL_TOL, f"trial {trial} mode {mode}: {worst}"

    def test_conv_fd_eval(self):
        rng = np.random.default_rng(21)
        params = init_conv_pool(rng_seed=30, n_bins=7, channels=(3, 4, 5), fc_hidden=4)
        # nonzero biases exercise every backward term
        for name in params.tensors:
            if name.endswith("_b"):
                params.tensors[name] = rng.normal(size=params.tensors[name].shape) * 0.1
        x = np.abs(rng.normal(size=(5, 7)))
        worst, checked = fd_gradcheck(params, x)
        assert checked == sum(t.size for t in params.tensors.values())
        assert worst < REL_TOL


class TestCheckpoint:
    def test_roundtrip_both_archs(self, tmp_path):
        for params in (init_pooled_fc(10, 4, rng_seed=3), init_conv_pool(rng_seed=3)):
            path = tmp_path / f"{params.arch}.svdm"
            save_checkpoint(path, params)
            again = load_checkpoint(path)
            assert again.arch == params.arch
            assert set(again.tensors) == set(params.tensors)
            for name in params.tensors:
                np.testing.assert_array_equal(again.tensors[name], params.tensors[name])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.svdm"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "x.svdm"
        save_checkpoint(path, init_pooled_fc(4, 2, rng_seed=0))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_scores_survive_roundtrip(self, tmp_path):
        params = init_conv_pool(rng_seed=9)
        x = np.abs(np.random.default_rng(1).normal(size=(4, 257)))
        before = forward(params, x).score
        save_checkpoint(tmp_path / "m.svdm", params)
        after = forward(load_checkpoint(tmp_path / "m.svdm"), x).score
        assert before == after
