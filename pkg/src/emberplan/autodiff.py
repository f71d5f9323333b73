"""Minimal reverse-mode automatic differentiation on numpy arrays.

The engine records a Wengert-style graph of ``Var`` nodes as expressions are
built and walks it backwards to accumulate vector-Jacobian products.  It
supports exactly the layer zoo the planning networks need (dense, strided
convolutions and their transposes, LSTM cells, multi-head attention, softmax
heads) plus an Adam optimizer and a named-tensor checkpoint format.  All math
runs in 64-bit floats; shapes may carry one leading batch dimension.

Not a general tensor framework: no GPU, no graph compilation, and only the
broadcasting the layers here require.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

FLOAT = np.float64

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    """One node of the computation graph: a value plus its provenance."""

    __slots__ = ("value", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False,
                 parents: tuple = (), vjp: Callable | None = None):
        self.value = np.asarray(value, dtype=FLOAT)
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, as_var(other))

    def __radd__(self, other):
        return add(as_var(other), self)

    def __sub__(self, other):
        return sub(self, as_var(other))

    def __rsub__(self, other):
        return sub(as_var(other), self)

    def __mul__(self, other):
        return mul(self, as_var(other))

    def __rmul__(self, other):
        return mul(as_var(other), self)

    def __truediv__(self, other):
        return div(self, as_var(other))

    def __rtruediv__(self, other):
        return div(as_var(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_var(other))


def param(value) -> Var:
    """Wrap an array as a trainable leaf."""
    return Var(np.array(value, dtype=FLOAT), requires_grad=True)


def constant(value) -> Var:
    """Wrap an array as a non-trainable input."""
    return Var(value, requires_grad=False)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def _node(value, parents: Sequence[Var], vjp: Callable) -> Var:
    """Create a graph node, pruning the tape when gradients are off."""
    if not _grad_enabled:
        return Var(value)
    tracked = tuple(p for p in parents)
    needs = any(p.requires_grad for p in tracked)
    if not needs:
        return Var(value)
    return Var(value, requires_grad=True, parents=tracked, vjp=vjp)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Var, b: Var) -> Var:
    out = a.value + b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g, a.value.shape),
                            _unbroadcast(g, b.value.shape)))


def sub(a: Var, b: Var) -> Var:
    out = a.value - b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g, a.value.shape),
                            _unbroadcast(-g, b.value.shape)))


def mul(a: Var, b: Var) -> Var:
    out = a.value * b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.value.shape),
                            _unbroadcast(g * a.value, b.value.shape)))


def div(a: Var, b: Var) -> Var:
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.value.shape),
                            _unbroadcast(-g * a.value / (b.value * b.value),
                                         b.value.shape)))


def neg(a: Var) -> Var:
    return _node(-a.value, (a,), lambda g: (-g,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    out = np.log(a.value)
    return _node(out, (a,), lambda g: (g / a.value,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Var) -> Var:
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def clip(a: Var, lo: float, hi: float) -> Var:
    """Clamp values; the gradient passes only inside the open interval."""
    out = np.clip(a.value, lo, hi)
    inside = (a.value > lo) & (a.value < hi)
    return _node(out, (a,), lambda g: (g * inside,))


def minimum(a: Var, b: Var) -> Var:
    """Elementwise minimum; the subgradient follows the smaller operand."""
    take_a = a.value <= b.value
    out = np.where(take_a, a.value, b.value)
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.value.shape),
                            _unbroadcast(g * ~take_a, b.value.shape)))


def maximum(a: Var, b: Var) -> Var:
    take_a = a.value >= b.value
    out = np.where(take_a, a.value, b.value)
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * take_a, a.value.shape),
                            _unbroadcast(g * ~take_a, b.value.shape)))


# ---------------------------------------------------------------------------
# shape and reduction primitives


def reshape(a: Var, shape: tuple) -> Var:
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Var, axes: tuple) -> Var:
    inverse = tuple(np.argsort(axes))
    return _node(a.value.transpose(axes), (a,),
                 lambda g: (g.transpose(inverse),))


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis),
                 tuple(parts), vjp)


def narrow(a: Var, axis: int, start: int, size: int) -> Var:
    """Slice `size` entries along `axis` starting at `start`."""
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)

    def vjp(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return (full,)

    return _node(a.value[index], (a,), vjp)


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _node(out, (a,), vjp)


def mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    count = a.value.size if axis is None else a.value.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def matmul(a: Var, b: Var) -> Var:
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError(
            f"matmul requires stacked matrices, got {a.value.shape} @ {b.value.shape}")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return (_unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape))

    return _node(np.matmul(a.value, b.value), (a, b), vjp)


def take_along(a: Var, indices: np.ndarray, axis: int) -> Var:
    """Gather entries of `a` along `axis` by an integer index array.

    The index array must match `a`'s shape except along `axis` and is treated
    as a constant; gradients scatter-add back into the source.
    """
    idx = np.asarray(indices)

    def vjp(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, idx, 0.0, axis=axis)  # validates the index
        np.add.at(full, _along_index(full.shape, idx, axis), g)
        return (full,)

    return _node(np.take_along_axis(a.value, idx, axis=axis), (a,), vjp)


def _along_index(shape, idx, axis):
    grids = np.ogrid[tuple(slice(0, s) for s in idx.shape)]
    grids = list(grids)
    grids[axis] = idx
    return tuple(grids)


def pad_hw(a: Var, pad: int) -> Var:
    """Zero-pad the trailing two (spatial) axes by `pad` on every side."""
    if pad == 0:
        return a
    widths = [(0, 0)] * (a.value.ndim - 2) + [(pad, pad), (pad, pad)]

    def vjp(g):
        index = tuple([slice(None)] * (a.value.ndim - 2)
                      + [slice(pad, -pad), slice(pad, -pad)])
        return (g[index],)

    return _node(np.pad(a.value, widths), (a,), vjp)


def crop_hw(a: Var, pad: int) -> Var:
    """Drop `pad` rows/columns from every side of the trailing two axes."""
    if pad == 0:
        return a
    index = tuple([slice(None)] * (a.value.ndim - 2)
                  + [slice(pad, -pad), slice(pad, -pad)])

    def vjp(g):
        widths = [(0, 0)] * (a.value.ndim - 2) + [(pad, pad), (pad, pad)]
        return (np.pad(g, widths),)

    return _node(a.value[index], (a,), vjp)


# ---------------------------------------------------------------------------
# convolution plumbing: im2col / col2im form an exact adjoint pair


def _patch_scatter(cols: np.ndarray, out_hw: tuple, kh: int, kw: int,
                   stride: int) -> np.ndarray:
    B = cols.shape[0]
    C = cols.shape[1] // (kh * kw)
    H, W = out_hw
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1
    d = cols.reshape(B, C, kh, kw, ho, wo)
    out = np.zeros((B, C, H, W), dtype=FLOAT)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, i, j]
    return out


def _patch_gather(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    B, C, H, W = x.shape
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1
    v = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    v = v[:, :, ::stride, ::stride, :, :]
    v = v.transpose(0, 1, 4, 5, 2, 3)
    return np.ascontiguousarray(v).reshape(B, C * kh * kw, ho * wo)


def im2col(a: Var, kh: int, kw: int, stride: int) -> Var:
    B, C, H, W = a.value.shape
    return _node(_patch_gather(a.value, kh, kw, stride), (a,),
                 lambda g: (_patch_scatter(g, (H, W), kh, kw, stride),))


def col2im(a: Var, out_hw: tuple, kh: int, kw: int, stride: int) -> Var:
    return _node(_patch_scatter(a.value, out_hw, kh, kw, stride), (a,),
                 lambda g: (_patch_gather(g, kh, kw, stride),))


# ---------------------------------------------------------------------------
# layers


def dense(x: Var, w: Var, b: Var) -> Var:
    """Affine map x @ w + b over the last axis."""
    if x.value.shape[-1] != w.value.shape[0]:
        raise ValueError(
            f"dense: input {x.value.shape} incompatible with weights {w.value.shape}")
    flat = x.value.ndim == 1
    if flat:
        x = reshape(x, (1, x.value.shape[0]))
    out = add(matmul(x, w), b)
    if flat:
        out = reshape(out, (out.value.shape[-1],))
    return out


def conv2d(x: Var, w: Var, b: Var, stride: int = 1, padding: int = 0) -> Var:
    """Strided 2-D convolution, channels-first (B, C, H, W) with (O, C, kh, kw)."""
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ValueError(
            f"conv2d: need 4-D input and kernel, got {x.value.shape} and {w.value.shape}")
    B, C, H, W = x.value.shape
    O, Cw, kh, kw = w.value.shape
    if C != Cw:
        raise ValueError(
            f"conv2d: input channels {C} do not match kernel channels {Cw}")
    xp = pad_hw(x, padding)
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    cols = im2col(xp, kh, kw, stride)
    wmat = reshape(w, (O, C * kh * kw))
    y = matmul(wmat, cols)
    y = reshape(y, (B, O, ho, wo))
    return add(y, reshape(b, (1, O, 1, 1)))


def conv2d_transpose(x: Var, w: Var, b: Var, stride: int = 1, padding: int = 0) -> Var:
    """Transposed convolution, channels-first (B, Ci, H, W) with (Ci, Co, kh, kw)."""
    if x.value.ndim != 4 or w.value.ndim != 4:
        raise ValueError(
            f"conv2d_transpose: need 4-D input and kernel, got {x.value.shape} and {w.value.shape}")
    B, Ci, H, W = x.value.shape
    Ciw, Co, kh, kw = w.value.shape
    if Ci != Ciw:
        raise ValueError(
            f"conv2d_transpose: input channels {Ci} do not match kernel channels {Ciw}")
    hp = (H - 1) * stride + kh
    wp = (W - 1) * stride + kw
    wmat = reshape(w, (Ci, Co * kh * kw))
    t = matmul(transpose(wmat, (1, 0)), reshape(x, (B, Ci, H * W)))
    y = col2im(t, (hp, wp), kh, kw, stride)
    y = crop_hw(y, padding)
    return add(y, reshape(b, (1, Co, 1, 1)))


def lstm_step(x: Var, h: Var, c: Var, w: Var, b: Var) -> tuple[Var, Var]:
    """One LSTM cell step; gates ordered (input, forget, cell, output).

    `w` has shape (input_size + hidden, 4 * hidden) and `b` (4 * hidden,).
    Returns the new (hidden, cell) pair.
    """
    hidden = h.value.shape[-1]
    expect = x.value.shape[-1] + hidden
    if w.value.shape != (expect, 4 * hidden):
        raise ValueError(
            f"lstm_step: weights {w.value.shape} do not match input {x.value.shape} "
            f"and hidden {h.value.shape}")
    gates = dense(concat([x, h], axis=-1), w, b)
    i = sigmoid(narrow(gates, -1, 0, hidden))
    f = sigmoid(narrow(gates, -1, hidden, hidden))
    g = tanh(narrow(gates, -1, 2 * hidden, hidden))
    o = sigmoid(narrow(gates, -1, 3 * hidden, hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def multi_head_attention(q: Var, k: Var, v: Var, params: Mapping[str, Var],
                         n_heads: int, mask: Var | None = None) -> Var:
    """Scaled dot-product attention with `n_heads` heads.

    `q` is (B, nq, d); `k` and `v` are (B, nk, d).  `params` holds the four
    projections ``wq wk wv wo`` of shape (d, d) with biases ``bq bk bv bo``.
    `mask`, if given, is added to the pre-softmax scores and broadcasts over
    heads as (B, 1, nq, nk) or (B, nq, nk).
    """
    B, nq, d = q.value.shape
    nk = k.value.shape[1]
    if k.value.shape != (B, nk, d) or v.value.shape != (B, nk, d):
        raise ValueError(
            f"multi_head_attention: query {q.value.shape} incompatible with "
            f"keys {k.value.shape} and values {v.value.shape}")
    if d % n_heads != 0:
        raise ValueError(f"multi_head_attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(x, n):
        return transpose(reshape(x, (B, n, n_heads, dh)), (0, 2, 1, 3))

    qh = split(dense(q, params["wq"], params["bq"]), nq)
    kh = split(dense(k, params["wk"], params["bk"]), nk)
    vh = split(dense(v, params["wv"], params["bv"]), nk)
    scores = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), constant(1.0 / np.sqrt(dh)))
    if mask is not None:
        m = mask
        if m.value.ndim == 3:
            m = reshape(m, (B, 1, m.value.shape[1], m.value.shape[2]))
        scores = add(scores, m)
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, vh)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (B, nq, d))
    return dense(merged, params["wo"], params["bo"])


def softmax(a: Var, axis: int = -1) -> Var:
    """Numerically stable softmax along `axis`."""
    shift = constant(a.value.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(a: Var, axis: int = -1) -> Var:
    shift = constant(a.value.max(axis=axis, keepdims=True))
    centered = sub(a, shift)
    lse = log(sum_(exp(centered), axis=axis, keepdims=True))
    return sub(centered, lse)


def softmax_cross_entropy(logits: Var, onehot: Var, axis: int = -1) -> Var:
    """Mean cross-entropy between softmax(logits) and one-hot targets."""
    logp = log_softmax(logits, axis=axis)
    per_row = neg(sum_(mul(logp, onehot), axis=axis))
    return mean(per_row)


def mse(pred: Var, target: Var) -> Var:
    d = sub(pred, target)
    return mean(mul(d, d))


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Var) -> dict[int, np.ndarray]:
    """Accumulate d loss / d node for every reachable node, keyed by id."""
    if loss.value.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.value.shape}")
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=FLOAT)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def gradients(loss: Var, params: Mapping[str, Var]) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss for every named parameter (zeros if unused)."""
    table = backward(loss)
    out = {}
    for name, var in params.items():
        g = table.get(id(var))
        out[name] = np.zeros_like(var.value) if g is None else np.asarray(g)
    return out


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction and a stepped exponential learning-rate decay.

    With ``decay_every`` set, the rate used at (1-indexed) step t equals
    ``lr * decay_factor ** (t // decay_every)``, i.e. it drops by the factor
    once per window.  Callers may also pass an explicit ``lr`` per step when
    the schedule is driven externally.
    """

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, decay_every: int | None = None,
                 decay_factor: float = 0.96):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay_every = decay_every
        self.decay_factor = decay_factor
        self.t = 0
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def current_lr(self, step: int | None = None) -> float:
        """Learning rate for the given 1-indexed step (next step by default)."""
        t = self.t + 1 if step is None else step
        if self.decay_every is None:
            return self.lr
        return self.lr * self.decay_factor ** (t // self.decay_every)

    def step(self, params: Mapping[str, Var], grads: Mapping[str, np.ndarray],
             lr: float | None = None) -> None:
        self.t += 1
        rate = self.current_lr(self.t) if lr is None else lr
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, var in params.items():
            g = grads[name]
            m, v = self.state.get(name, (np.zeros_like(var.value),
                                         np.zeros_like(var.value)))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.state[name] = (m, v)
            var.value = var.value - rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# named-tensor checkpoints

_MAGIC = b"ETNS"
_VERSION = 1
_DTYPE_CODES = {"<f8": 0, "<f4": 1, "<i8": 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, tensors: Mapping[str, np.ndarray],
                    meta: Mapping | None = None) -> None:
    """Write named tensors (plus a JSON metadata blob) to a binary archive.

    Layout, all integers little-endian: magic ``ETNS``, u32 version, u32
    metadata length, UTF-8 JSON metadata, u32 tensor count, then per tensor:
    u16 name length, name, u8 dtype code (0=f8, 1=f4, 2=i8), u8 rank,
    u32 dims, raw little-endian C-order data.
    """
    blob = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            code = _DTYPE_CODES.get(arr.dtype.newbyteorder("<").str)
            if code is None:
                arr = arr.astype(FLOAT)
                code = _DTYPE_CODES["<f8"]
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive written by ``save_checkpoint``; rejects other versions."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a named-tensor checkpoint archive")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(
                f"{path}: checkpoint version {version} is not supported "
                f"(this build reads version {_VERSION})")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8")) if meta_len else {}
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", fh.read(2))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            dtype = np.dtype(_CODE_DTYPES[code])
            data = fh.read(int(np.prod(shape)) * dtype.itemsize)
            tensors[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return tensors, meta


def tree_values(params: Mapping[str, Var]) -> dict[str, np.ndarray]:
    """Detach a parameter tree to plain arrays (for snapshots and pickling)."""
    return {name: var.value.copy() for name, var in params.items()}


def tree_params(values: Mapping[str, np.ndarray]) -> dict[str, Var]:
    """Rebuild a trainable parameter tree from plain arrays."""
    return {name: param(arr) for name, arr in values.items()}
