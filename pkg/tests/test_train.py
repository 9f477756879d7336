import io
import math

import numpy as np
import pytest

from mrca import train as tr
from mrca.data import Dataset
from mrca.evaluation import EvalReport
from mrca.network import ModelParams, NetworkShape, init_params
from mrca.synthetic import overfit_fixture
from mrca.train import (AdamState, NumericalError, TrainConfig, adam_step, effective_lr,
                        fit, multi_run, read_metrics_log, write_metrics_log)

SMALL = dict(hidden=4, seq_len=20, pool=4, stride=2)


@pytest.fixture(scope="module")
def fixture():
    return overfit_fixture(0)


def scalar_adam(theta, grads, lr, decay, b1=0.9, b2=0.999, eps=1e-7):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        step = lr / (1 + decay * t)
        theta -= step * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def one_tensor_params(value):
    shape = NetworkShape(1, 1, 2, 1, 2, 1)
    params = init_params(0, shape)
    params.tensors["dense_b"][:] = value
    return params


class TestAdam:
    def test_matches_scalar_oracle(self):
        cfg = TrainConfig(decay=0.1)
        gs = [0.3, -1.2, 0.05, 2.0, -0.7]
        params = one_tensor_params(0.4)
        state = AdamState.zeros(params)
        for g in gs:
            adam_step(params, {"dense_b": np.array([g])}, state, cfg)
        expect = scalar_adam(0.4, gs, cfg.learning_rate, cfg.decay)
        assert params["dense_b"][0] == pytest.approx(expect, abs=1e-15)
        assert state.t == len(gs)

    def test_zero_gradient_is_noop(self):
        params = one_tensor_params(0.4)
        before = params.copy()
        state = AdamState.zeros(params)
        zeros = {k: np.zeros_like(a) for k, a in params.tensors.items()}
        adam_step(params, zeros, state, TrainConfig())
        for k in params.tensors:
            np.testing.assert_array_equal(params[k], before[k])

    def test_first_step_size_is_lr(self):
        # bias-corrected first step moves each coordinate by ~lr/(1+decay)
        cfg = TrainConfig()
        params = one_tensor_params(0.0)
        adam_step(params, {"dense_b": np.array([5.0])}, AdamState.zeros(params), cfg)
        assert params["dense_b"][0] == pytest.approx(-cfg.learning_rate / (1 + cfg.decay), rel=1e-6)

    def test_non_finite_gradient_names_tensor(self):
        params = one_tensor_params(0.0)
        with pytest.raises(NumericalError, match="dense_b"):
            adam_step(params, {"dense_b": np.array([np.nan])}, AdamState.zeros(params),
                      TrainConfig())

    def test_lr_strictly_decreasing(self):
        cfg = TrainConfig()
        lrs = [effective_lr(cfg, t) for t in range(1, 200)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))
        assert effective_lr(cfg, 0) == cfg.learning_rate


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(batch_size=0),
                                    dict(dropout=1.0), dict(loss="hinge"),
                                    dict(patience=60, max_epochs=50), dict(seq_len=10, pool=80)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_output_follows_loss(self):
        assert TrainConfig(loss="bce_sigmoid").network_shape(5, 3).output == "sigmoid"
        assert TrainConfig().network_shape(5, 3).output == "linear"


def scripted(monkeypatch, f1s):
    it = iter(f1s)

    def fake(pred, gold):
        f = next(it)
        return EvalReport(int(f * 100), 100 - int(f * 100), 100 - int(f * 100), 1)
    monkeypatch.setattr(tr, "micro_prf", fake)


class TestFit:
    def test_runs_all_epochs_when_improving(self, fixture, monkeypatch):
        ds, store = fixture
        scripted(monkeypatch, [i / 100 for i in range(1, 51)])
        res = fit(ds, store, TrainConfig(max_epochs=50, **SMALL))
        assert len(res.history) == 50 and res.best_epoch == 50

    def test_stops_after_patience(self, fixture, monkeypatch):
        ds, store = fixture
        scripted(monkeypatch, [0.3] * 50)
        res = fit(ds, store, TrainConfig(max_epochs=50, patience=5, **SMALL))
        assert len(res.history) == 6 and res.best_epoch == 1

    def test_returns_best_checkpoint(self, fixture, monkeypatch):
        ds, store = fixture
        scripted(monkeypatch, [0.1, 0.5, 0.2, 0.2, 0.2])
        seen = []
        res = fit(ds, store, TrainConfig(max_epochs=5, patience=5, **SMALL),
                  callback=lambda r: seen.append(r))
        assert res.best_epoch == 2 and res.best_f1 == pytest.approx(0.5)
        assert [r.epoch for r in seen] == [1, 2, 3, 4, 5]
        assert res.best_f1 == max(r.val_f1 for r in res.history)

    def test_empty_validation_raises(self, fixture):
        ds, store = fixture
        empty = Dataset(ds.relation_vocab, {"train": ds["train"], "validation": []})
        with pytest.raises(ValueError, match="empty"):
            fit(empty, store, TrainConfig(max_epochs=1, patience=1, **SMALL))

    def test_empty_train_raises(self, fixture):
        ds, store = fixture
        empty = Dataset(ds.relation_vocab, {"train": [], "validation": ds["train"]})
        with pytest.raises(ValueError, match="empty"):
            fit(empty, store, TrainConfig(max_epochs=1, patience=1, **SMALL))

    def test_deterministic(self, fixture):
        ds, store = fixture
        cfg = TrainConfig(max_epochs=3, patience=3, **SMALL)
        a, b = fit(ds, store, cfg), fit(ds, store, cfg)
        for k in a.params.tensors:
            np.testing.assert_array_equal(a.params[k], b.params[k])
        la, lb = io.StringIO(), io.StringIO()
        write_metrics_log(a.history, la, include_timing=False)
        write_metrics_log(b.history, lb, include_timing=False)
        assert la.getvalue() == lb.getvalue()

    def test_loss_decreases_on_fixture(self, fixture):
        ds, store = fixture
        res = fit(ds, store, TrainConfig(max_epochs=15, patience=15, hidden=8, seq_len=20,
                                         pool=4, stride=2))
        assert res.history[-1].train_loss < res.history[0].train_loss

    def test_lr_logged_decreasing(self, fixture):
        ds, store = fixture
        res = fit(ds, store, TrainConfig(max_epochs=3, patience=3, **SMALL))
        lrs = [r.lr for r in res.history]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_multi_run_single(fixture):
    ds, store = fixture
    r = multi_run(ds, store, TrainConfig(max_epochs=2, patience=2, **SMALL), n_runs=1)
    assert r.aggregate.stdev["f1"] == 0.0 and len(r.runs) == 1


def test_multi_run_seeds_differ(fixture):
    ds, store = fixture
    r = multi_run(ds, store, TrainConfig(max_epochs=1, patience=1, **SMALL), n_runs=2)
    assert not np.array_equal(r.runs[0].params["dense_W"], r.runs[1].params["dense_W"])


def test_multi_run_rejects_zero(fixture):
    ds, store = fixture
    with pytest.raises(ValueError):
        multi_run(ds, store, TrainConfig(**SMALL), n_runs=0)


class TestMetricsLog:
    def test_round_trip(self):
        hist = [tr.EpochRecord(1, 0.5, 0.1, 0.2, 0.3, 0.001, 12.0)]
        buf = io.StringIO()
        write_metrics_log(hist, buf)
        rows = read_metrics_log(io.StringIO(buf.getvalue()))
        assert rows[0]["val_f1"] == 0.3 and list(rows[0]) == list(tr.LOG_FIELDS)

    def test_malformed_line_number(self):
        with pytest.raises(ValueError, match="line 2"):
            read_metrics_log(io.StringIO('{"epoch": 1, "val_f1": 0.1}\n{oops\n'))
