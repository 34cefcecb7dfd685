import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vdr import checks
from vdr import diffcore as dc
from vdr.diffcore import RnnConfig, RnnState, grad_check
from vdr.errors import RunFailure, ValidationError

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 8), elements=finite)


# ---------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_allclose(dc.softmax(np.zeros(2)).data, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(dc.softmax(np.full(4, -17.25)).data, [0.25] * 4, atol=1e-12)
    np.testing.assert_allclose(dc.softmax(np.log([1.0, 2.0, 3.0])).data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)


def test_log_softmax_examples():
    np.testing.assert_allclose(dc.log_softmax(np.zeros(2)).data, [-math.log(2)] * 2, atol=1e-12)
    assert dc.log_softmax(np.array([7.3])).data.tolist() == [0.0]
    np.testing.assert_allclose(dc.log_softmax(np.log([1.0, 2.0, 3.0])).data,
                               np.log([1 / 6, 2 / 6, 3 / 6]), atol=1e-12)


@pytest.mark.parametrize("fn", [dc.softmax, dc.log_softmax])
def test_empty_logits(fn):
    with pytest.raises(ValidationError) as exc:
        fn(np.zeros(0))
    assert exc.value.code == "empty-logits"


def test_masked_softmax_ignores_masked_entries():
    p = dc.softmax(np.array([1.0, 50.0, 2.0]), mask=np.array([True, False, True])).data
    assert p[1] == 0.0
    np.testing.assert_allclose(p[[0, 2]], dc.softmax(np.array([1.0, 2.0])).data, atol=1e-15)


@given(vectors, finite)
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(dc.softmax(x + c).data, dc.softmax(x).data, atol=1e-9)


@given(vectors)
def test_softmax_is_a_distribution(x):
    p = dc.softmax(x).data
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-9


@given(vectors)
def test_log_softmax_matches_log_of_softmax(x):
    lp = dc.log_softmax(x).data
    assert abs(np.exp(lp).sum() - 1.0) < 1e-9
    np.testing.assert_allclose(lp, np.log(dc.softmax(x).data), atol=1e-7)


# ---------------------------------------------------------------- per-op gradients

def _param(rng, shape):
    return dc.parameter(rng.normal(size=shape))


OPS = {
    "add_broadcast": (lambda p: ((p["a"] + p["b"]) * p["w"]).sum(), {"a": (3, 4), "b": (4,), "w": (3, 4)}),
    "mul_neg_sub": (lambda p: ((p["a"] * p["b"] - p["a"]) * -1.0).sum(), {"a": (2, 3), "b": (2, 3)}),
    "div_power": (lambda p: (p["a"] / (p["b"] * p["b"] + 1.0)).sum() + (p["a"] ** 2).sum(),
                  {"a": (3,), "b": (3,)}),
    "tanh_sigmoid": (lambda p: (dc.tanh(p["a"]) * dc.sigmoid(p["b"])).sum(), {"a": (5,), "b": (5,)}),
    "exp_log": (lambda p: dc.log(dc.exp(p["a"]) + 1.0).sum(), {"a": (4,)}),
    "matmul_2d": (lambda p: (dc.matmul(p["a"], p["b"]) * p["w"]).sum(),
                  {"a": (3, 4), "b": (4, 2), "w": (3, 2)}),
    "matmul_batched": (lambda p: (dc.matmul(p["a"], p["b"]) * p["w"]).sum(),
                       {"a": (2, 3, 4), "b": (4, 2), "w": (2, 3, 2)}),
    "matmul_vec": (lambda p: (dc.matmul(p["a"], p["v"]) * p["w"]).sum(), {"a": (3, 4), "v": (4,), "w": (3,)}),
    "sum_mean_axis": (lambda p: (dc.vsum(p["a"], axis=0) * p["w"]).sum() + dc.mean(p["a"] * p["a"]),
                      {"a": (3, 4), "w": (4,)}),
    "reshape_swap": (lambda p: (dc.swapaxes(dc.reshape(p["a"], (2, 3, 2)), 0, 2) * p["w"]).sum(),
                     {"a": (3, 4), "w": (2, 3, 2)}),
    "index_gather": (lambda p: (p["a"][np.array([0, 2, 0]), 1:] * p["w"]).sum(), {"a": (3, 4), "w": (3, 3)}),
    "concat_stack": (lambda p: (dc.stack([dc.concat([p["a"], p["b"]], axis=-1), p["c"]]) * p["w"]).sum(),
                     {"a": (2, 1), "b": (2, 2), "c": (2, 3), "w": (2, 2, 3)}),
    "softmax_masked": (lambda p: (dc.softmax(p["a"], mask=np.array([[1, 1, 0], [1, 0, 1]], bool)) * p["w"]).sum(),
                       {"a": (2, 3), "w": (2, 3)}),
    "log_softmax": (lambda p: (dc.log_softmax(p["a"]) * p["w"]).sum(), {"a": (2, 5), "w": (2, 5)}),
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_op_gradients_match_finite_differences(name, seed):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(seed)
    params = {k: _param(rng, s) for k, s in shapes.items()}
    assert grad_check(fn, params).passed


def test_backward_leaves_finite_grads_of_matching_shape(rng):
    a, b = _param(rng, (3, 4)), _param(rng, (4,))
    loss = dc.log_softmax(dc.tanh(dc.matmul(a, b))).sum()
    loss.backward()
    for v in (a, b):
        assert v.grad.shape == v.data.shape and np.isfinite(v.grad).all()


def test_ops_do_not_mutate_inputs(rng):
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    before = x.copy(), w.copy()
    a, b = dc.parameter(x), dc.parameter(w)
    out = dc.log_softmax(dc.matmul(dc.tanh(a), b) * 2.0 + 1.0)
    dc.softmax(a, mask=np.ones((3, 4), bool)).sum().backward()
    out.sum().backward()
    np.testing.assert_array_equal(x, before[0])
    np.testing.assert_array_equal(w, before[1])


# ---------------------------------------------------------------- grad_check harness

def test_grad_check_on_square():
    x = dc.parameter(3.0)
    report = grad_check(lambda p: p["x"] * p["x"], {"x": x})
    assert x.grad == pytest.approx(6.0)
    assert report.errors["x"] < 1e-6


def test_grad_check_on_constant_function(rng):
    # at a true zero the relative error only measures rounding, so compare absolutely
    x = _param(rng, 5)
    f = lambda p: dc.softmax(p["x"]).sum()  # noqa: E731
    grad_check(f, {"x": x})
    assert np.abs(x.grad).max() < 1e-12
    for i in range(5):
        up, down = x.data.copy(), x.data.copy()
        up[i] += 1e-5
        down[i] -= 1e-5
        fd = (f({"x": dc.Value(up)}).item() - f({"x": dc.Value(down)}).item()) / 2e-5
        assert abs(fd) < 1e-10


def test_grad_check_restores_parameters(rng):
    x = _param(rng, (2, 3))
    snapshot = x.data.copy()
    grad_check(lambda p: dc.tanh(p["x"]).sum(), {"x": x})
    np.testing.assert_array_equal(x.data, snapshot)


@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_grad_check_non_finite():
    with pytest.raises(RunFailure) as exc:
        grad_check(lambda p: dc.log(p["x"]), {"x": dc.parameter(-1.0)})
    assert exc.value.code == "non-finite-loss"


# ---------------------------------------------------------------- cells

def _zero_cell(cell, d_in, h):
    gates = 4 if cell == "lstm" else 3
    return {"wx": dc.parameter(np.zeros((d_in, gates * h))), "wh": dc.parameter(np.zeros((h, gates * h))),
            "b": dc.parameter(np.zeros(gates * h))}


def test_lstm_zero_params_zero_state(rng):
    s = dc.lstm_step(rng.normal(size=3), RnnState.zeros(4), _zero_cell("lstm", 3, 4))
    assert not s.hidden.data.any() and not s.cell.data.any()


def test_gru_zero_params_zero_state(rng):
    s = dc.gru_step(rng.normal(size=3), RnnState.zeros(4, with_cell=False), _zero_cell("gru", 3, 4))
    assert not s.hidden.data.any()


def test_lstm_saturated_forget_gate_keeps_cell(rng):
    p = _zero_cell("lstm", 3, 4)
    p["b"].data[4:8] = 1e3
    prev = RnnState(dc.Value(rng.normal(size=4)), dc.Value(rng.normal(size=4)))
    s = dc.lstm_step(rng.normal(size=3), prev, p)
    np.testing.assert_allclose(s.cell.data, prev.cell.data, atol=1e-6)


def test_gru_saturated_update_gate_keeps_hidden(rng):
    p = dc.init_cell(rng, "gru", 3, 4)
    p["b"].data[:4] = 1e3
    prev = RnnState(dc.Value(rng.normal(size=4)))
    s = dc.gru_step(rng.normal(size=3), prev, p)
    np.testing.assert_allclose(s.hidden.data, prev.hidden.data, atol=1e-6)


def test_cell_does_not_modify_input_state(rng):
    prev = RnnState(dc.Value(rng.normal(size=4)), dc.Value(rng.normal(size=4)))
    h, c = prev.hidden.data.copy(), prev.cell.data.copy()
    dc.lstm_step(rng.normal(size=3), prev, dc.init_cell(rng, "lstm", 3, 4))
    np.testing.assert_array_equal(prev.hidden.data, h)
    np.testing.assert_array_equal(prev.cell.data, c)


@pytest.mark.parametrize("step, cell", [(dc.lstm_step, "lstm"), (dc.gru_step, "gru")])
def test_cell_shape_mismatch(rng, step, cell):
    p = dc.init_cell(rng, cell, 3, 4)
    with pytest.raises(ValidationError) as exc:
        step(np.zeros(5), RnnState.zeros(4, with_cell=cell == "lstm"), p)
    assert exc.value.code == "shape"


@pytest.mark.parametrize("cell", ["lstm", "gru"])
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_cell_gradients(cell, seed):
    assert checks.check_cell(cell, seed).passed


# ---------------------------------------------------------------- run_rnn

@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_length_one_sequence_is_one_step(rng, cell):
    cfg = RnnConfig(cell, 1, False, 4)
    p = dc.init_rnn(rng, cfg, 3)
    x = rng.normal(size=(1, 3))
    step = dc.lstm_step if cell == "lstm" else dc.gru_step
    one = step(x[0], RnnState.zeros(4, with_cell=cell == "lstm"), dc.scope(p, "l0.fw."))
    np.testing.assert_allclose(dc.run_rnn(x, cfg, p).data, one.hidden.data, atol=1e-15)


@pytest.mark.parametrize("cell", ["lstm", "gru"])
def test_bidirectional_palindrome_with_tied_params(rng, cell):
    cfg = RnnConfig(cell, 1, True, 3)
    p = dc.init_rnn(rng, cfg, 2)
    for k in ("wx", "wh", "b"):
        p[f"l0.bw.{k}"] = p[f"l0.fw.{k}"]
    half = rng.normal(size=(2, 2))
    seq = np.concatenate([half, rng.normal(size=(1, 2)), half[::-1]])
    out = dc.run_rnn(seq, cfg, p).data
    np.testing.assert_allclose(out[:3], out[3:], atol=1e-12)


def test_run_rnn_empty_sequence(rng):
    cfg = RnnConfig("gru", 1, False, 3)
    with pytest.raises(ValidationError) as exc:
        dc.run_rnn(np.zeros((0, 2)), cfg, dc.init_rnn(rng, cfg, 2))
    assert exc.value.code == "empty-sequence"


def test_run_rnn_is_deterministic(rng):
    cfg = RnnConfig("lstm", 2, True, 3)
    p = dc.init_rnn(rng, cfg, 2)
    x = rng.normal(size=(5, 2))
    assert dc.run_rnn(x, cfg, p).data.tobytes() == dc.run_rnn(x, cfg, p).data.tobytes()


@pytest.mark.parametrize("cell, layers, bi", [("lstm", 2, False), ("gru", 1, True), ("lstm", 2, True)])
def test_padded_batch_matches_individual_sequences(rng, cell, layers, bi):
    cfg = RnnConfig(cell, layers, bi, 3)
    p = dc.init_rnn(rng, cfg, 2)
    lengths = np.array([5, 2, 1, 4])
    seqs = [rng.normal(size=(n, 2)) for n in lengths]
    padded = np.zeros((4, 5, 2))
    for i, s in enumerate(seqs):
        padded[i, :len(s)] = s
    batched = dc.run_rnn(padded, cfg, p, lengths).data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batched[i], dc.run_rnn(s, cfg, p).data, atol=1e-13)


@pytest.mark.parametrize("cell, layers, bi", [("lstm", 2, False), ("gru", 1, True)])
def test_run_rnn_gradients(cell, layers, bi):
    assert checks.check_run_rnn(cell, layers, bi).passed
