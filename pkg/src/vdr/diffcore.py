"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations the dialog models need are provided. Every op works on
batched arrays; the recurrent cells accept either a single vector or a
``(batch, width)`` matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import RunFailure, ValidationError

Params = dict  # name -> Value, insertion-ordered


class Value:
    """An array node in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None  # ndarray (op) Value defers to Value

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("shape", "backward() without grad needs a scalar")
            grad = np.ones_like(self.data)
        order = _topo(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Value):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)


def _topo(root: Value) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data) -> Value:
    return Value(np.array(data, dtype=np.float64), requires_grad=True)


def _accum(node: Value, g: np.ndarray):
    if not node.requires_grad:
        return
    if g.shape != node.data.shape:
        g = _unbroadcast(g, node.data.shape)
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _node(data, parents, backward) -> Value:
    if any(p.requires_grad for p in parents):
        return Value(data, True, tuple(parents), backward)
    return Value(data)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), backward)


def neg(a) -> Value:
    a = as_value(a)
    return _node(-a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def power(a, exponent: float) -> Value:
    a = as_value(a)
    e = float(exponent)
    return _node(a.data ** e, (a,), lambda g: _accum(a, g * e * a.data ** (e - 1)))


def tanh(a) -> Value:
    a = as_value(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: _accum(a, g * (1.0 - out * out)))


def sigmoid(a) -> Value:
    a = as_value(a)
    # split by sign so large |x| never overflows exp
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _node(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)))


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: _accum(a, g * out))


def log(a) -> Value:
    a = as_value(a)
    return _node(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ValidationError("shape", f"matmul {a.shape} @ {b.shape}")

    def backward(g):
        ad, bd = a.data, b.data
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        if a.requires_grad:
            ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape)
            _accum(a, ga.reshape(ad.shape))
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape)
            _accum(b, gb.reshape(bd.shape))

    return _node(a.data @ b.data, (a, b), backward)


def vsum(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _node(out, (a,), backward)


def mean(a, axis=None) -> Value:
    a = as_value(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return vsum(a, axis) * (1.0 / n)


def reshape(a, shape) -> Value:
    a = as_value(a)
    return _node(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.data.shape)))


def swapaxes(a, ax1: int, ax2: int) -> Value:
    a = as_value(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: _accum(a, np.swapaxes(g, ax1, ax2)))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def take(a, idx) -> Value:
    """``a[idx]`` with numpy indexing semantics; repeated fancy indices accumulate."""
    a = as_value(a)
    basic = _is_basic_index(idx)

    def backward(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[idx] = g
        else:
            np.add.at(ga, idx, g)
        _accum(a, ga)

    return _node(a.data[idx], (a,), backward)


def concat(values: Iterable, axis: int = -1) -> Value:
    values = [as_value(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    sizes = np.cumsum([v.data.shape[axis] for v in values])[:-1]

    def backward(g):
        for v, part in zip(values, np.split(g, sizes, axis=axis)):
            _accum(v, part)

    return _node(out, values, backward)


def stack(values: Iterable, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    out = np.stack([v.data for v in values], axis=axis)

    def backward(g):
        for i, v in enumerate(values):
            _accum(v, np.take(g, i, axis=axis))

    return _node(out, values, backward)


# ---------------------------------------------------------------- normalizers

def softmax(x, axis: int = -1, mask=None) -> Value:
    """Softmax along ``axis``. Positions where ``mask`` is False get probability 0."""
    x = as_value(x)
    if x.data.ndim == 0 or x.data.shape[axis] == 0:
        raise ValidationError("empty-logits")
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (x,), backward)


def log_softmax(x, axis: int = -1) -> Value:
    x = as_value(x)
    if x.data.ndim == 0 or x.data.shape[axis] == 0:
        raise ValidationError("empty-logits")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        _accum(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), backward)


# ---------------------------------------------------------------- layers

def init_uniform(rng: np.random.Generator, fan_in: int, shape) -> Value:
    bound = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape))


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True) -> Params:
    p = {"w": init_uniform(rng, d_in, (d_in, d_out))}
    if bias:
        p["b"] = parameter(np.zeros(d_out))
    return p


def linear(x, params: Mapping[str, Value]) -> Value:
    out = matmul(x, params["w"])
    return out + params["b"] if "b" in params else out


def scope(params: Mapping[str, Value], prefix: str) -> Params:
    """View of ``params`` restricted to keys under ``prefix``, with it stripped."""
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def prefixed(prefix: str, params: Mapping[str, Value]) -> Params:
    return {prefix + k: v for k, v in params.items()}


# ---------------------------------------------------------------- recurrent cells

@dataclass
class RnnState:
    hidden: Value
    cell: Value | None = None

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None, with_cell: bool = True) -> "RnnState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(Value(np.zeros(shape)), Value(np.zeros(shape)) if with_cell else None)


def init_cell(rng: np.random.Generator, cell: str, d_in: int, hidden: int) -> Params:
    gates = 4 if cell == "lstm" else 3
    return {
        "wx": init_uniform(rng, d_in, (d_in, gates * hidden)),
        "wh": init_uniform(rng, hidden, (hidden, gates * hidden)),
        "b": parameter(np.zeros(gates * hidden)),
    }


def _check_cell(x: Value, state: RnnState, params, gates: int):
    wx, wh = params["wx"].data, params["wh"].data
    hidden = wh.shape[0]
    if (wx.shape[1] != gates * hidden or wh.shape[1] != gates * hidden
            or params["b"].data.shape != (gates * hidden,)
            or x.data.shape[-1] != wx.shape[0] or state.hidden.data.shape[-1] != hidden
            or (gates == 4 and (state.cell is None or state.cell.data.shape != state.hidden.data.shape))):
        raise ValidationError("shape", "cell input/state/params mismatch")


def _lstm_from_proj(xw: Value, state: RnnState, wh: Value, hidden: int) -> RnnState:
    gates = xw + matmul(state.hidden, wh)
    sig = sigmoid(gates)
    i = sig[..., :hidden]
    f = sig[..., hidden:2 * hidden]
    o = sig[..., 3 * hidden:]
    g = tanh(gates[..., 2 * hidden:3 * hidden])
    c = f * state.cell + i * g
    return RnnState(o * tanh(c), c)


def _gru_from_proj(xw: Value, state: RnnState, wh_zr: Value, wh_n: Value, hidden: int) -> RnnState:
    h = state.hidden
    zr = sigmoid(xw[..., :2 * hidden] + matmul(h, wh_zr))
    z = zr[..., :hidden]
    r = zr[..., hidden:]
    n = tanh(xw[..., 2 * hidden:] + matmul(r * h, wh_n))
    # (1 - z) * n + z * h
    return RnnState(n + z * (h - n))


def lstm_step(x, state: RnnState, params: Mapping[str, Value]) -> RnnState:
    """One LSTM step (gate order input, forget, candidate, output)."""
    x = as_value(x)
    _check_cell(x, state, params, 4)
    hidden = params["wh"].data.shape[0]
    return _lstm_from_proj(matmul(x, params["wx"]) + params["b"], state, params["wh"], hidden)


def gru_step(x, state: RnnState, params: Mapping[str, Value]) -> RnnState:
    """One GRU step; reset gate applied to the previous hidden before its projection."""
    x = as_value(x)
    _check_cell(x, state, params, 3)
    hidden = params["wh"].data.shape[0]
    wh = params["wh"]
    return _gru_from_proj(matmul(x, params["wx"]) + params["b"], state,
                          wh[:, :2 * hidden], wh[:, 2 * hidden:], hidden)


@dataclass(frozen=True)
class RnnConfig:
    cell: str = "lstm"          # lstm | gru
    layers: int = 1
    bidirectional: bool = False
    hidden: int = 8

    def __post_init__(self):
        if self.cell not in ("lstm", "gru"):
            raise ValidationError("shape", f"unknown cell {self.cell!r}")
        if self.layers < 1 or self.hidden < 1:
            raise ValidationError("shape", "layers and hidden must be >= 1")

    @property
    def out_dim(self) -> int:
        return self.hidden * (2 if self.bidirectional else 1)


def init_rnn(rng: np.random.Generator, config: RnnConfig, d_in: int) -> Params:
    params: Params = {}
    dirs = ("fw", "bw") if config.bidirectional else ("fw",)
    for layer in range(config.layers):
        width = d_in if layer == 0 else config.out_dim
        for d in dirs:
            params.update(prefixed(f"l{layer}.{d}.", init_cell(rng, config.cell, width, config.hidden)))
    return params


def _reverse_index(lengths: np.ndarray, steps: int):
    """Gather index reversing each row within its valid length; padding stays put."""
    t = np.arange(steps)[None, :]
    lens = lengths[:, None]
    time_idx = np.where(t < lens, lens - 1 - t, t)
    batch_idx = np.broadcast_to(np.arange(len(lengths))[:, None], time_idx.shape)
    return batch_idx, time_idx


def _run_direction(xs: Value, lengths: np.ndarray, config: RnnConfig, params) -> tuple[Value, list]:
    batch, steps, _ = xs.data.shape
    h = config.hidden
    proj = matmul(xs, params["wx"]) + params["b"]
    wh = params["wh"]
    if config.cell == "gru":
        wh_zr, wh_n = wh[:, :2 * h], wh[:, 2 * h:]
    state = RnnState.zeros(h, batch, with_cell=config.cell == "lstm")
    outputs = []
    for t in range(steps):
        xw = proj[:, t, :]
        if config.cell == "lstm":
            new = _lstm_from_proj(xw, state, wh, h)
        else:
            new = _gru_from_proj(xw, state, wh_zr, wh_n, h)
        live = t < lengths
        if not live.all():
            m = live[:, None].astype(np.float64)
            new = RnnState(state.hidden + m * (new.hidden - state.hidden),
                           None if new.cell is None else state.cell + m * (new.cell - state.cell))
        state = new
        outputs.append(state.hidden)
    return state.hidden, outputs


def run_rnn(seq, config: RnnConfig, params: Mapping[str, Value], lengths=None) -> Value:
    """Encode a sequence (``(T, D)``) or a padded batch (``(B, T, D)`` + ``lengths``).

    Returns the final hidden of the last layer, or for a bidirectional RNN the
    concatenation ``[forward_final, backward_final]``.
    """
    seq = as_value(seq)
    single = seq.ndim == 2
    if single:
        seq = reshape(seq, (1,) + seq.shape)
    batch, steps = seq.shape[:2]
    if steps == 0:
        raise ValidationError("empty-sequence")
    lengths = np.full(batch, steps) if lengths is None else np.asarray(lengths)
    if (lengths < 1).any() or (lengths > steps).any():
        raise ValidationError("empty-sequence", "every sequence needs 1..T steps")
    rev = _reverse_index(lengths, steps) if config.bidirectional else None

    xs = seq
    for layer in range(config.layers):
        fw_final, fw_seq = _run_direction(xs, lengths, config, scope(params, f"l{layer}.fw."))
        if not config.bidirectional:
            final = fw_final
            if layer + 1 < config.layers:
                xs = stack(fw_seq, axis=1)
            continue
        bw_final, bw_seq = _run_direction(xs[rev], lengths, config, scope(params, f"l{layer}.bw."))
        final = concat([fw_final, bw_final], axis=-1)
        if layer + 1 < config.layers:
            xs = concat([stack(fw_seq, axis=1), stack(bw_seq, axis=1)[rev]], axis=-1)
    return final[0] if single else final


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)   # param name -> max relative error
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def grad_check(f: Callable[[Mapping[str, Value]], Value], params: Mapping[str, Value],
               step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(params)`` to central differences.

    Parameter arrays are perturbed in place and restored afterwards.
    """
    def evaluate() -> float:
        val = f(params).item()
        if not np.isfinite(val):
            raise RunFailure("non-finite-loss")
        return val

    for p in params.values():
        p.grad = None
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise RunFailure("non-finite-loss")
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = evaluate()
            flat[i] = orig - step
            down = evaluate()
            flat[i] = orig
            num[i] = (up - down) / (2 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
        report.errors[name] = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0
    return report
