import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrgmtl import diffcore as dc
from ehrgmtl.diffcore import Tape, Tensor
from ehrgmtl.encoder import EncoderConfig
from ehrgmtl.errors import ConfigError, ContractError, SchemaError
from ehrgmtl.graphbuild import batch_graphs, build_graph
from ehrgmtl.mtl import (DtpState, MultiTaskModel, TaskHead, TrainConfig, batch_recall, dtp_weight, fit,
                         kpi_update, sgd_step, step_decay, task_head_prob, task_losses, total_loss,
                         train_epoch)
from oracles import record, vocab_from_windows


def head(w, b=0.0):
    return TaskHead(0, Tensor(np.asarray(w, dtype=float), True), Tensor(b, True))


# ---------------------------------------------------------------- heads


def test_head_prob_examples():
    assert task_head_prob([np.array([1.0]), np.array([2.0])], head([0.5])) == pytest.approx(
        1 / (1 + math.exp(-1.5)), abs=1e-15)
    assert task_head_prob([np.array([1.0]), np.array([-1.0])], head([3.0])) == 0.5
    assert task_head_prob([np.array([4.0, -2.0])], head([0.0, 0.0])) == 0.5
    assert task_head_prob([np.array([1.0, 2.0])], head([1.0, 0.0], b=0.25)) == pytest.approx(
        1 / (1 + math.exp(-1.25)))


def test_head_dimension_mismatch():
    with pytest.raises(SchemaError):
        task_head_prob([np.array([1.0, 2.0])], head([1.0]))


# ---------------------------------------------------------------- KPI and DTP


def test_batch_recall_examples():
    assert batch_recall([0.9, 0.2, 0.1], [1, 1, 0]) == 0.5
    assert batch_recall([0.9, 0.2], [0, 0]) is None
    assert batch_recall([0.6, 0.7, 0.99], [1, 0, 1]) == 1.0
    assert batch_recall([0.5], [1]) == 1.0  # ties are positive


def test_kpi_update_examples():
    s = DtpState.initial(1, alpha=0.9)
    assert kpi_update(s, 0, 1.0).kpi[0] == pytest.approx(0.95, abs=1e-15)
    s = DtpState(np.array([0.4]), alpha=0.5)
    assert kpi_update(s, 0, 0.8).kpi[0] == pytest.approx(0.6, abs=1e-15)
    before = s.kpi.copy()
    kpi_update(s, 0, None)
    assert s.kpi.tobytes() == before.tobytes()
    with pytest.raises(ContractError):
        kpi_update(s, 0, 1.5)


def test_dtp_weight_examples():
    assert abs(dtp_weight(0.5, 0) - math.log(2)) <= 1e-12
    assert abs(dtp_weight(0.5, 1) - 0.5 * math.log(2)) <= 1e-12
    assert 0 <= dtp_weight(1.0, 1) <= 1e-11
    assert math.isfinite(dtp_weight(0.0, 2))


def test_dtp_weight_strictly_decreasing_on_grid():
    grid = np.round(np.arange(1, 100) / 100, 2)
    for gamma in (0, 1, 2):
        w = [dtp_weight(k, gamma) for k in grid]
        assert all(a > b for a, b in zip(w, w[1:]))
        assert min(w) >= 0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 1.0), st.lists(st.one_of(st.none(), st.floats(0, 1)), max_size=50))
def test_kpi_stays_in_unit_interval(alpha, values):
    s = DtpState.initial(1, alpha=alpha)
    for v in values:
        kpi_update(s, 0, v)
        assert 0.0 <= s.kpi[0] <= 1.0


def test_state_validation():
    with pytest.raises(ConfigError):
        DtpState.initial(2, alpha=0.0)
    with pytest.raises(ConfigError):
        DtpState.initial(2, gamma=-1)


# ---------------------------------------------------------------- loss and SGD


def test_total_loss_examples():
    one = [Tensor(1.0), Tensor(1.0)]
    assert total_loss(one, [0.5, 2.0]).item() == 2.5
    assert total_loss([Tensor(0.3), Tensor(0.4)], [1, 1]).item() == pytest.approx(0.7)
    with pytest.raises(ContractError):
        total_loss(one, [1.0, -0.1])
    with pytest.raises(ContractError):
        total_loss(one, [1.0])


def test_zero_weight_contributes_no_gradient():
    a, b = Tensor(2.0, True), Tensor(3.0, True)
    with Tape() as tape:
        L = total_loss([dc.mean(dc.mul(a, a)), dc.mean(dc.mul(b, b))], [1.0, 0.0])
    dc.backward(L, tape)
    assert a.grad == pytest.approx(4.0) and b.grad == 0.0


def test_sgd_step_examples():
    p = Tensor(1.0, True)
    sgd_step([p], [np.array(0.5)], 0.1)
    assert p.item() == pytest.approx(0.95, abs=1e-15)
    q = Tensor(np.array([0.1, -0.2]), True)
    raw = q.data.tobytes()
    sgd_step([q], [np.array([3.0, 4.0])], 0.0)
    assert q.data.tobytes() == raw
    r = Tensor(2.0, True)
    for _ in range(2):
        sgd_step([r], [np.array(0.25)], 0.1)
    assert r.item() == pytest.approx(2.0 - 2 * 0.1 * 0.25, abs=1e-15)
    with pytest.raises(ContractError):
        sgd_step([q], [np.zeros(3)], 0.1)


def test_step_decay_examples():
    assert step_decay(0.01, 0, 0.5, 20) == 0.01
    assert step_decay(0.01, 20, 0.5, 20) == pytest.approx(0.005, abs=1e-18)
    assert step_decay(0.01, 39, 0.5, 20) == step_decay(0.01, 20, 0.5, 20)
    assert step_decay(0.01, 40, 0.5, 20) == pytest.approx(0.0025)


def test_train_config_validation():
    for bad in (dict(lr0=-1), dict(batch_size=0), dict(lr_decay_factor=0), dict(lr_decay_factor=1.5),
                dict(lr_decay_period=0), dict(gamma=-1), dict(alpha=0), dict(kpi_source="x")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


# ---------------------------------------------------------------- training


def toy_problem(n=96, seed=0):
    """Task 0 is 'event 0 active', task 1 is 'event 1 active'."""
    rng = np.random.default_rng(seed)
    windows = ["a", "b", "a", "b", "c", "c"]
    vocab = vocab_from_windows(windows)
    graphs, labels = [], []
    for _ in range(n):
        ev = rng.integers(0, 2, len(windows))
        if not ev.any():
            ev[2] = 1
        graphs.append(build_graph(record(ev), vocab))
        labels.append([ev[0], ev[1]])
    return vocab, graphs, np.array(labels, dtype=float)


def toy_model(vocab, seed=0, d=8, layers=2):
    return MultiTaskModel.create(EncoderConfig("gin", layers, hidden_dim=d), vocab.size + 1, ["t0", "t1"], seed)


def snapshot(model):
    return [p.data.copy() for p in model.parameters()]


def test_zero_learning_rate_leaves_parameters_unchanged():
    vocab, graphs, labels = toy_problem(40)
    model = toy_model(vocab)
    before = snapshot(model)
    state = DtpState.initial(2)
    reports = train_epoch(model, graphs, labels, state, TrainConfig(lr0=0.0, batch_size=8))
    assert len(reports) == 5 and state.step == 5
    for a, b in zip(before, snapshot(model)):
        assert a.tobytes() == b.tobytes()


def test_report_total_is_weighted_sum():
    vocab, graphs, labels = toy_problem(40)
    model = toy_model(vocab)
    for r in train_epoch(model, graphs, labels, DtpState.initial(2), TrainConfig(batch_size=8)):
        assert abs(r.total - sum(w * L for w, L in zip(r.weights, r.losses))) <= 1e-12
        assert r.lr == 0.01


def test_loss_decreases_on_separable_set():
    vocab, graphs, labels = toy_problem(200)
    model = toy_model(vocab)
    history = fit(model, graphs, labels, TrainConfig(epochs=5, batch_size=16, dtp_enabled=False))
    totals = [h.total for h in history]
    assert all(a > b for a, b in zip(totals, totals[1:])), totals


def test_empty_dataset_rejected():
    vocab, _, _ = toy_problem(1)
    with pytest.raises(ContractError):
        train_epoch(toy_model(vocab), [], np.zeros((0, 2)), DtpState.initial(2), TrainConfig())


def _grads(model, batch, weights):
    model.zero_grad()
    with Tape() as tape:
        losses, _ = task_losses(model, batch)
        L = total_loss(losses, weights)
    dc.backward(L, tape)
    return {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for n, p in model.named_parameters()}


def test_gradient_isolation_and_encoder_accumulation():
    vocab, graphs, labels = toy_problem(12)
    model = toy_model(vocab)
    batch = batch_graphs(graphs, labels)
    w = [0.7, 1.3]
    joint = _grads(model, batch, w)
    only0 = _grads(model, batch, [w[0], 0.0])
    only1 = _grads(model, batch, [0.0, w[1]])
    for name in joint:
        if name.startswith("head.0"):
            assert joint[name].tobytes() == only0[name].tobytes()
            assert not only1[name].any()
        elif name.startswith("head.1"):
            assert joint[name].tobytes() == only1[name].tobytes()
            assert not only0[name].any()
        else:
            np.testing.assert_allclose(joint[name], only0[name] + only1[name], rtol=0, atol=1e-10)


def test_other_task_labels_do_not_move_head_gradient():
    vocab, graphs, labels = toy_problem(12)
    model = toy_model(vocab)
    flipped = labels.copy()
    flipped[:, 1] = 1 - flipped[:, 1]
    a = _grads(model, batch_graphs(graphs, labels), [1.0, 1.0])
    b = _grads(model, batch_graphs(graphs, flipped), [1.0, 1.0])
    for name in ("head.0.weight", "head.0.bias"):
        assert a[name].tobytes() == b[name].tobytes()


def test_training_is_deterministic():
    def run():
        vocab, graphs, labels = toy_problem(50)
        model = toy_model(vocab)
        hist = fit(model, graphs, labels, TrainConfig(epochs=2, batch_size=8))
        return [(h.total, h.losses, h.weights, h.kpi) for h in hist], snapshot(model)

    h1, p1 = run()
    h2, p2 = run()
    assert h1 == h2
    assert all(a.tobytes() == b.tobytes() for a, b in zip(p1, p2))


def test_fixed_weights_when_dtp_disabled():
    vocab, graphs, labels = toy_problem(20)
    reports = train_epoch(toy_model(vocab), graphs, labels, DtpState.initial(2),
                          TrainConfig(batch_size=10, dtp_enabled=False))
    assert all(r.weights == [1.0, 1.0] for r in reports)


def test_validation_kpi_source_updates_once_per_epoch():
    vocab, graphs, labels = toy_problem(30)
    model = toy_model(vocab)
    cfg = TrainConfig(epochs=2, batch_size=10, kpi_source="validation")
    state = DtpState.initial(2)
    hist = fit(model, graphs[:20], labels[:20], cfg, state, val_graphs=graphs[20:], val_labels=labels[20:])
    assert len(hist) == 2 and state.step == 4
    with pytest.raises(ConfigError):
        fit(toy_model(vocab), graphs, labels, cfg)


def test_predict_proba_shape_and_range():
    vocab, graphs, _ = toy_problem(10)
    p = toy_model(vocab).predict_proba(graphs, batch_size=3)
    assert p.shape == (10, 2) and np.all((p > 0) & (p < 1))
