import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from realdiff.autodiff import Tensor, grad_check_params, ops
from realdiff.data import compute_stats, generate_synthetic_cohort, prepare_patient
from realdiff.errors import DimensionError
from realdiff.gradcheck_suite import EPS, OP_TOL, check_lstm_chain
from realdiff.lstm import GATES, LstmLayer, LstmParams, forecast_head, lstm_cell, lstm_forward
from realdiff.model import lstm_rows
from realdiff.training import fit


def zero_layer(d_in, h):
    layer = LstmLayer.init(d_in, h, np.random.default_rng(0))
    for g in GATES:
        layer.W[g].data[...] = 0.0
        layer.U[g].data[...] = 0.0
        layer.b[g].data[...] = 0.0
    return layer


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# ---------------------------------------------------------------- the cell

def test_zero_params_zero_state():
    layer = zero_layer(3, 4)
    h, c = lstm_cell(Tensor(np.ones(3)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), layer)
    assert np.array_equal(h.data, np.zeros(4)) and np.array_equal(c.data, np.zeros(4))


def test_zero_params_halve_cell_state():
    layer = zero_layer(2, 3)
    c0 = np.array([1.0, -2.0, 0.4])
    h, c = lstm_cell(Tensor(np.ones(2)), Tensor(np.zeros(3)), Tensor(c0), layer)
    assert np.array_equal(c.data, 0.5 * c0)
    assert np.allclose(h.data, 0.5 * np.tanh(0.5 * c0), rtol=0, atol=1e-15)


def test_scalar_hand_trace():
    # one unit, W = 1 for every gate, U = 0, b = 0, x = 1, c_prev = 0.3
    layer = zero_layer(1, 1)
    for g in GATES:
        layer.W[g].data[...] = 1.0
    h, c = lstm_cell(Tensor([[1.0]]), Tensor([[0.0]]), Tensor([[0.3]]), layer)
    s = sigmoid(1.0)
    c_expected = s * 0.3 + s * math.tanh(1.0)
    h_expected = s * math.tanh(c_expected)
    assert abs(s - 0.7311) < 1e-4
    assert abs(c.data[0, 0] - c_expected) < 1e-15
    assert abs(h.data[0, 0] - h_expected) < 1e-15


def test_recurrent_weights_enter_each_gate():
    layer = zero_layer(1, 1)
    layer.U["o"].data[...] = 2.0
    layer.b["c"].data[...] = 1.0
    h, c = lstm_cell(Tensor([[0.0]]), Tensor([[0.5]]), Tensor([[0.0]]), layer)
    # f = i = 0.5, o = sig(1.0), c = 0.5 * tanh(1)
    assert abs(c.data[0, 0] - 0.5 * math.tanh(1.0)) < 1e-15
    assert abs(h.data[0, 0] - sigmoid(1.0) * math.tanh(0.5 * math.tanh(1.0))) < 1e-15


def test_cell_shape_errors():
    layer = zero_layer(3, 4)
    with pytest.raises(DimensionError):
        lstm_cell(Tensor(np.ones(2)), Tensor(np.zeros(4)), Tensor(np.zeros(4)), layer)
    with pytest.raises(DimensionError):
        lstm_cell(Tensor(np.ones(3)), Tensor(np.zeros(4)), Tensor(np.zeros(3)), layer)


@given(st.integers(0, 10_000), st.integers(1, 12))
@settings(max_examples=40, deadline=None)
def test_cell_state_bound(seed, steps):
    rng = np.random.default_rng(seed)
    layer = LstmLayer.init(3, 5, rng)
    c0 = rng.normal(size=5)
    h, c = Tensor(np.zeros(5)), Tensor(c0)
    for t in range(1, steps + 1):
        h, c = lstm_cell(Tensor(rng.uniform(-1, 1, 3)), h, c, layer)
        assert np.all(np.abs(c.data) <= np.abs(c0) + t)
        assert np.all(np.abs(h.data) < 1.0)


def test_gates_strictly_inside_unit_interval():
    rng = np.random.default_rng(1)
    layer = LstmLayer.init(3, 4, rng)
    x = Tensor(rng.normal(scale=3.0, size=(50, 3)))
    hp = Tensor(rng.normal(size=(50, 4)))
    for g in ("f", "i", "o"):
        gate = ops.sigmoid(ops.linear(x, layer.W[g], layer.b[g]) + ops.linear(hp, layer.U[g])).data
        assert np.all((gate > 0) & (gate < 1))


# ------------------------------------------------------------------- stack

def test_single_step_equals_cell_composition():
    rng = np.random.default_rng(2)
    p = LstmParams.init(3, hidden=4, rng=rng)
    x = rng.normal(size=(1, 3))
    out = lstm_forward(x, p).data
    z = Tensor(np.zeros((1, 4)))
    h1, _ = lstm_cell(Tensor(x), z, z, p.layers[0])
    h2, _ = lstm_cell(h1, z, z, p.layers[1])
    assert np.array_equal(out, h2.data)


def test_output_shape():
    p = LstmParams.init(3, hidden=8, rng=np.random.default_rng(3))
    assert lstm_forward(np.ones((5, 3)), p).shape == (5, 8)
    assert lstm_forward(np.ones((2, 5, 3)), p).shape == (2, 5, 8)
    assert forecast_head(lstm_forward(np.ones((5, 3)), p), p).shape == (5,)


def test_layer_widths():
    p = LstmParams.init(4, hidden=6, rng=np.random.default_rng(4))
    assert p.layers[0].d_in == 4 and p.layers[1].d_in == 6
    assert len(p.tensors()) == 2 * 12 + 2


def test_head_zero_weights_gives_bias():
    p = LstmParams.init(3, hidden=4, rng=np.random.default_rng(5))
    p.head_w.data[...] = 0.0
    p.head_b.data[...] = -0.8
    assert np.array_equal(forecast_head(Tensor(np.ones((3, 4))), p).data, np.full(3, -0.8))


def test_batched_forward_matches_single():
    rng = np.random.default_rng(6)
    p = LstmParams.init(3, hidden=4, rng=rng)
    seqs = rng.normal(size=(3, 6, 3))
    batched = lstm_forward(seqs, p).data
    for b in range(3):
        assert np.max(np.abs(batched[b] - lstm_forward(seqs[b], p).data)) < 1e-14


def test_gradient_through_ten_steps():
    rng = np.random.default_rng(7)
    p = LstmParams.init(3, hidden=4, rng=rng)
    for t in p.tensors().values():
        if t.ndim == 1:
            t.data[...] = rng.normal(scale=0.1, size=t.shape)
    seq = rng.normal(size=(10, 3))
    target = rng.normal(size=10)
    err = grad_check_params(lambda: ops.mse(forecast_head(lstm_forward(seq, p), p), target), p.tensors(), EPS)
    assert err < 1e-5


def test_cell_chain_gradient_including_states():
    assert check_lstm_chain(np.random.default_rng(8)) < OP_TOL


def test_prefix_outputs_ignore_later_steps():
    rng = np.random.default_rng(9)
    p = LstmParams.init(3, hidden=4, rng=rng)
    seq = rng.normal(size=(6, 3))
    seq2 = seq.copy()
    seq2[4:] += 1.0
    assert np.array_equal(lstm_forward(seq, p).data[:4], lstm_forward(seq2, p).data[:4])


def test_forward_fill_rows_keep_earlier_predictions():
    rng = np.random.default_rng(10)
    p = LstmParams.init(4, hidden=4, rng=rng)

    class P:  # minimal stand-in with the attributes lstm_rows reads
        def __init__(self, times, fvc):
            self.times, self.fvc = np.asarray(times), np.asarray(fvc)

    full = P([0.0, 1.0, 2.0, 3.0, 4.0], [1.0, 0.9, 0.8, 0.7, 0.6])
    # dropping visit 3 changes rows from index 2 on (the next-time column of row 2)
    dropped = P([0.0, 1.0, 2.0, 4.0], [1.0, 0.9, 0.8, 0.6])
    a = forecast_head(lstm_forward(lstm_rows(full), p), p).data
    b = forecast_head(lstm_forward(lstm_rows(dropped), p), p).data
    assert np.array_equal(a[:2], b[:2])
    assert a[2] != b[2]


def test_time_delta_column_optional():
    class P:
        times = np.array([0.0, 0.5, 2.0])
        fvc = np.array([1.0, 2.0, 3.0])

    with_delta, without = lstm_rows(P()), lstm_rows(P(), time_delta=False)
    assert with_delta.shape == (2, 4) and without.shape == (2, 3)
    assert np.array_equal(with_delta[:, 3], [0.0, 0.5])


@pytest.mark.slow
def test_overfits_two_patients():
    # default lr 1e-3 measured to reach RMSE 0.003-0.016 in 2000 steps on seeds 0-2
    cohort = generate_synthetic_cohort(4, 0)
    stats = compute_stats(cohort)
    pts = [prepare_patient(r, stats) for r in cohort.records[:2]]
    p = LstmParams.init(4, 16, 2, np.random.default_rng(0))
    rows = [lstm_rows(q) for q in pts]
    target = np.concatenate([q.targets for q in pts])

    def preds():
        return ops.concat([forecast_head(lstm_forward(r, p), p) for r in rows], axis=0)

    fit(p.tensors(), lambda _: ops.mse(preds(), target), 2000, lr=1e-3)
    assert np.sqrt(np.mean((preds().data - target) ** 2)) < 0.05
