import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrca.gradcheck import check_network, relative_error
from mrca.network import (MRCAModel, ModelParams, NetworkShape, ShapeError, avg_pool,
                          backward, forward, init_params, lstm_forward, pooled_length,
                          predict)


def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_lstm(W, U, b, xs):
    """Reference recurrence written one scalar at a time (gate order i, f, g, o)."""
    u = U.shape[0]
    h = [0.0] * u
    c = [0.0] * u
    out = []
    for x in xs:
        z = []
        for k in range(4 * u):
            acc = b[k]
            for j in range(len(x)):
                acc += x[j] * W[j][k]
            for j in range(u):
                acc += h[j] * U[j][k]
            z.append(acc)
        new_h, new_c = [], []
        for j in range(u):
            i = _sig(z[j])
            f = _sig(z[u + j])
            g = math.tanh(z[2 * u + j])
            o = _sig(z[3 * u + j])
            cj = f * c[j] + i * g
            new_c.append(cj)
            new_h.append(o * math.tanh(cj))
        h, c = new_h, new_c
        out.append(h)
    return np.array(out)


def scalar_pool(H, pool, stride):
    n = (len(H) - pool) // stride + 1
    return np.array([[sum(H[i * stride + k][j] for k in range(pool)) / pool
                      for j in range(len(H[0]))] for i in range(n)])


def tiny_params(seed=0):
    shape = NetworkShape(embed_dim=1, hidden=2, seq_len=3, n_relations=2, pool=2, stride=1)
    rng = np.random.default_rng(seed)
    tensors = {k: rng.uniform(-0.8, 0.8, size=s) for k, s in shape.tensor_shapes().items()}
    return ModelParams(shape, tensors)


class TestShapes:
    def test_dense_rows_for_default_configuration(self):
        shape = NetworkShape(300, 500, 100, 216, 80, 2)
        assert shape.pooled_len == 11
        assert shape.tensor_shapes()["dense_W"] == (11000, 216)
        assert shape.tensor_shapes()["fw_W"] == (302, 2000)

    def test_parameter_count(self):
        # 2 * (302*2000 + 500*2000 + 2000) + 11000*216 + 216
        assert NetworkShape(300, 500, 100, 216, 80, 2).n_parameters() == 5_588_216
        assert NetworkShape(300, 500, 100, 24, 80, 2).n_parameters() == 3_476_024

    @pytest.mark.parametrize("bad", [dict(hidden=0), dict(embed_dim=-1), dict(pool=0),
                                     dict(seq_len=10, pool=20)])
    def test_invalid(self, bad):
        kw = dict(embed_dim=3, hidden=2, seq_len=10, n_relations=2, pool=4, stride=2)
        kw.update(bad)
        with pytest.raises(ShapeError):
            NetworkShape(**kw)

    def test_params_reject_wrong_tensor(self):
        p = init_params(0, NetworkShape(3, 2, 6, 2, 3, 1))
        p.tensors["dense_b"] = np.zeros(5)
        with pytest.raises(ShapeError):
            p.check()


class TestInit:
    shape = NetworkShape(4, 3, 6, 2, 3, 1)

    def test_same_seed_identical(self):
        a, b = init_params(7, self.shape), init_params(7, self.shape)
        for k in a.tensors:
            assert a[k].tobytes() == b[k].tobytes()

    def test_different_seeds_differ(self):
        a, b = init_params(7, self.shape), init_params(8, self.shape)
        assert not np.array_equal(a["fw_W"], b["fw_W"])

    def test_scheme(self):
        p = init_params(0, self.shape)
        assert not p["fw_b"].any() and not p["dense_b"].any()
        U = p["fw_U"]
        np.testing.assert_allclose(U @ U.T, np.eye(3), atol=1e-12)
        limit = math.sqrt(6 / (6 + 12))
        assert np.abs(p["fw_W"]).max() <= limit


class TestLSTM:
    def test_zero_input_zero_bias_gives_zero(self):
        p = init_params(0, NetworkShape(3, 4, 6, 2, 3, 1))
        h, _ = lstm_forward(p, np.zeros((6, 5)), "fw")
        assert not h.any()

    def test_matches_scalar_oracle(self):
        p = tiny_params()
        x = np.array([[0.5, -1.0, 2.0], [1.5, 0.3, -0.7], [-0.2, 0.9, 0.0]])
        h_fw, _ = lstm_forward(p, x, "fw")
        ref = scalar_lstm(p["fw_W"].tolist(), p["fw_U"], p["fw_b"].tolist(), x.tolist())
        np.testing.assert_allclose(h_fw[0], ref, rtol=0, atol=1e-14)

    def test_backward_direction_reverses(self):
        p = tiny_params()
        x = np.array([[0.5, -1.0, 2.0], [1.5, 0.3, -0.7], [-0.2, 0.9, 0.0]])
        h_bw, _ = lstm_forward(p, x, "bw")
        ref = scalar_lstm(p["bw_W"].tolist(), p["bw_U"], p["bw_b"].tolist(),
                          x[::-1].tolist())[::-1]
        np.testing.assert_allclose(h_bw[0], ref, rtol=0, atol=1e-14)

    def test_hidden_bounded(self):
        p = init_params(3, NetworkShape(3, 4, 6, 2, 3, 1))
        for t in p.tensors.values():
            t *= 3
        x = np.random.default_rng(0).normal(0, 3, size=(4, 6, 5))
        h, _ = lstm_forward(p, x, "fw")
        assert np.abs(h).max() < 1.0

    def test_shape_mismatch(self):
        p = init_params(0, NetworkShape(3, 2, 6, 2, 3, 1))
        with pytest.raises(ShapeError):
            lstm_forward(p, np.zeros((6, 4)), "fw")


class TestPool:
    def test_table_configuration(self):
        assert pooled_length(100, 80, 2) == 11
        assert avg_pool(np.zeros((100, 4)), 80, 2).shape == (11, 4)

    def test_constant(self):
        out = avg_pool(np.full((100, 3), 0.37), 80, 2)
        np.testing.assert_allclose(out, 0.37)

    def test_ramp(self):
        H = np.arange(1, 101, dtype=float)[:, None]
        out = avg_pool(H, 80, 2)
        assert out[0, 0] == pytest.approx(40.5)
        np.testing.assert_allclose(out, scalar_pool(H.tolist(), 80, 2))

    def test_too_short(self):
        with pytest.raises(ShapeError):
            avg_pool(np.zeros((10, 2)), 80, 2)

    @settings(max_examples=100)
    @given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 10))
    def test_length_law(self, L, pool, stride):
        if L < pool:
            return
        H = np.random.default_rng(L).normal(size=(L, 2))
        out = avg_pool(H, pool, stride)
        assert out.shape[0] == (L - pool) // stride + 1
        np.testing.assert_allclose(out, scalar_pool(H.tolist(), pool, stride), atol=1e-12)


class TestForward:
    def test_zero_params_zero_scores(self):
        shape = NetworkShape(3, 2, 6, 4, 3, 1)
        p = ModelParams(shape, {k: np.zeros(s) for k, s in shape.tensor_shapes().items()})
        s, _ = forward(p, np.ones((6, 5)))
        assert not s.any()

    def test_inference_deterministic(self):
        p = init_params(1, NetworkShape(3, 2, 6, 4, 3, 1, dropout=0.5))
        x = np.random.default_rng(0).normal(size=(3, 6, 5))
        a, ca = forward(p, x)
        b, _ = forward(p, x)
        assert ca.mask is None
        assert a.tobytes() == b.tobytes()

    def test_training_seeded(self):
        p = init_params(1, NetworkShape(3, 2, 6, 4, 3, 1, dropout=0.5))
        x = np.random.default_rng(0).normal(size=(3, 6, 5))
        a, _ = forward(p, x, True, np.random.default_rng(9))
        b, _ = forward(p, x, True, np.random.default_rng(9))
        c, _ = forward(p, x, False)
        assert a.tobytes() == b.tobytes()
        assert not np.allclose(a, c)

    def test_training_needs_rng(self):
        p = init_params(1, NetworkShape(3, 2, 6, 4, 3, 1))
        with pytest.raises(ValueError):
            forward(p, np.zeros((6, 5)), training=True)

    def test_end_to_end_oracle(self):
        p = tiny_params(4)
        x = np.array([[0.5, -1.0, 2.0], [1.5, 0.3, -0.7], [-0.2, 0.9, 0.0]])
        hf = scalar_lstm(p["fw_W"].tolist(), p["fw_U"], p["fw_b"].tolist(), x.tolist())
        hb = scalar_lstm(p["bw_W"].tolist(), p["bw_U"], p["bw_b"].tolist(),
                         x[::-1].tolist())[::-1]
        H = np.concatenate([hf, hb], axis=1)
        pooled = scalar_pool(H.tolist(), 2, 1)
        flat = pooled.reshape(-1)
        expected = [sum(flat[r] * p["dense_W"][r, j] for r in range(len(flat)))
                    + p["dense_b"][j] for j in range(2)]
        s, _ = forward(p, x)
        np.testing.assert_allclose(s[0], expected, rtol=0, atol=1e-13)

    def test_model_wrapper_batches(self):
        p = init_params(2, NetworkShape(3, 2, 6, 4, 3, 1))
        x = np.random.default_rng(0).normal(size=(7, 6, 5))
        np.testing.assert_allclose(MRCAModel(p).scores(x, batch_size=3), forward(p, x)[0])


class TestPredict:
    def test_threshold(self):
        np.testing.assert_array_equal(predict([0.49, 0.5, -1.0, 0.9]), [0, 1, 0, 1])

    def test_sigmoid_output(self):
        np.testing.assert_array_equal(predict([-0.1, 0.0, 2.0], output="sigmoid"), [0, 1, 1])

    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=10))
    def test_monotone_transform_invariance(self, scores):
        s = np.array(scores)
        np.testing.assert_array_equal(predict(s, 0.5), predict(np.exp(s), math.exp(0.5)))


class TestBackward:
    def test_zero_upstream(self):
        p = init_params(0, NetworkShape(3, 2, 6, 2, 3, 1))
        x = np.random.default_rng(0).normal(size=(2, 6, 5))
        _, cache = forward(p, x)
        grads = backward(p, cache, np.zeros((2, 2)))
        assert all(not g.any() for g in grads.values())

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed):
        errs = check_network(seed=seed, hidden=3, seq_len=5, n_relations=3)
        assert max(errs.values()) < 1e-4, errs

    def test_duplicate_sample_doubles(self):
        p = init_params(0, NetworkShape(3, 2, 6, 2, 3, 1))
        x = np.random.default_rng(0).normal(size=(1, 6, 5))
        w = np.array([[0.3, -1.2]])
        _, c1 = forward(p, x)
        g1 = backward(p, c1, w)
        _, c2 = forward(p, np.concatenate([x, x]))
        g2 = backward(p, c2, np.concatenate([w, w]))
        for k in g1:
            np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)

    def test_mismatched_cache(self):
        p = init_params(0, NetworkShape(3, 2, 6, 2, 3, 1))
        q = init_params(0, NetworkShape(3, 2, 6, 3, 3, 1))
        _, cache = forward(q, np.zeros((6, 5)))
        with pytest.raises(ShapeError):
            backward(p, cache, np.zeros(3))
        _, cache = forward(p, np.zeros((6, 5)))
        with pytest.raises(ShapeError):
            backward(p, cache, np.zeros((2, 2)))


def test_relative_error_floor():
    assert relative_error(1e-9, 2e-9) == 0.0
    assert relative_error(1.0, 1.001) == pytest.approx(0.001 / 1.001)
