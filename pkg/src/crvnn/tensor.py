"""numpy-backed tensors with reverse-mode automatic differentiation.

Every forward op appends a record to a global tape; ``Tensor.backward``
replays the tape once in reverse, accumulates gradients into the
participating tensors, and clears the tape.  A second backward without a
fresh forward pass raises ``TapeError``.

Two global precisions are supported: float32 ("standard", the default)
and float64 ("wide", used by finite-difference gradient checks).  The
precision applies to tensors created after the switch; graphs should not
straddle a switch.

No op mutates an input array.  Parameter updates (optimizers) write
``tensor.array`` directly between tapes, which is outside autodiff's view
by design.
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "TapeError",
    "no_grad",
    "precision",
    "set_precision",
    "current_dtype",
    "concat",
    "maximum",
    "minimum",
    "relu",
    "gelu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "absolute",
    "cumsum",
    "flip",
    "embedding",
    "gather_rows",
    "layer_norm",
    "softmax_cross_entropy",
    "dropout",
]

_DTYPES = {"standard": np.float32, "wide": np.float64}


class TapeError(RuntimeError):
    """Raised when backward is called without a live forward recording."""


class _State:
    __slots__ = ("dtype", "grad_enabled", "tape", "generation")

    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True
        self.tape = []
        self.generation = 0


_S = _State()


def current_dtype():
    return _S.dtype


def set_precision(mode: str):
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {tuple(_DTYPES)}")
    _S.dtype = _DTYPES[mode]


@contextlib.contextmanager
def precision(mode: str):
    old = _S.dtype
    _S.dtype = _DTYPES[mode]
    try:
        yield
    finally:
        _S.dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (evaluation / numeric probes)."""
    old = _S.grad_enabled
    _S.grad_enabled = False
    try:
        yield
    finally:
        _S.grad_enabled = old


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    __slots__ = ("array", "grad", "requires_grad", "_gen")

    def __init__(self, data, requires_grad: bool = False):
        self.array = np.asarray(data, dtype=_S.dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._gen = -1

    @property
    def shape(self):
        return self.array.shape

    @property
    def ndim(self):
        return self.array.ndim

    def item(self) -> float:
        return float(self.array)

    def detach(self) -> "Tensor":
        return Tensor(self.array)

    def backward(self):
        backward(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, inputs, bwd) -> Tensor:
    if _S.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._gen = _S.generation
        _S.tape.append((out, bwd))
    return out


def _accum(t: Tensor, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor):
    """Replay the tape in reverse from `loss`, then clear the tape."""
    if loss.array.size != 1:
        raise ValueError("backward expects a scalar loss")
    if not _S.tape or loss._gen != _S.generation:
        raise TapeError("tensor was not produced by the live tape; run a fresh forward pass")
    loss.grad = np.ones_like(loss.array)
    for out, bwd in reversed(_S.tape):
        if out.grad is None:
            continue
        bwd(out.grad)
        out.grad = None
    _S.tape.clear()
    _S.generation += 1


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = _t(a), _t(b)
    out = Tensor(a.array + b.array)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd)


def sub(a, b):
    a, b = _t(a), _t(b)
    out = Tensor(a.array - b.array)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = _t(a), _t(b)
    out = Tensor(a.array * b.array)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.array, a.shape))
        _accum(b, _unbroadcast(g * a.array, b.shape))

    return _record(out, (a, b), bwd)


def div(a, b):
    a, b = _t(a), _t(b)
    out = Tensor(a.array / b.array)

    def bwd(g):
        _accum(a, _unbroadcast(g / b.array, a.shape))
        _accum(b, _unbroadcast(-g * a.array / (b.array * b.array), b.shape))

    return _record(out, (a, b), bwd)


def neg(a):
    a = _t(a)
    out = Tensor(-a.array)

    def bwd(g):
        _accum(a, -g)

    return _record(out, (a,), bwd)


def matmul(a, b):
    a, b = _t(a), _t(b)
    # stacks of rows times one matrix: flatten to a single fat GEMM, which
    # is much faster than the per-batch-item path numpy takes otherwise
    if a.array.ndim > 2 and b.array.ndim == 2:
        k, n = b.array.shape
        a2 = np.ascontiguousarray(a.array).reshape(-1, k)
        out = Tensor((a2 @ b.array).reshape(*a.shape[:-1], n))

        def bwd_flat(g):
            g2 = np.ascontiguousarray(g).reshape(-1, n)
            _accum(a, (g2 @ b.array.T).reshape(a.shape))
            _accum(b, a2.T @ g2)

        return _record(out, (a, b), bwd_flat)
    out = Tensor(a.array @ b.array)

    def bwd(g):
        aa, bb, gg = a.array, b.array, g
        if aa.ndim == 1:
            aa = aa[None, :]
            gg = gg[..., None, :]
        if bb.ndim == 1:
            bb = bb[:, None]
            gg = gg[..., :, None]
        ga = gg @ np.swapaxes(bb, -1, -2)
        gb = np.swapaxes(aa, -1, -2) @ gg
        _accum(a, _unbroadcast(ga, aa.shape).reshape(a.shape))
        _accum(b, _unbroadcast(gb, bb.shape).reshape(b.shape))

    return _record(out, (a, b), bwd)


# ------------------------------------------------------------- elementwise


def exp(a):
    a = _t(a)
    out = Tensor(np.exp(a.array))

    def bwd(g):
        _accum(a, g * out.array)

    return _record(out, (a,), bwd)


def log(a):
    a = _t(a)
    out = Tensor(np.log(a.array))

    def bwd(g):
        _accum(a, g / a.array)

    return _record(out, (a,), bwd)


def tanh(a):
    a = _t(a)
    out = Tensor(np.tanh(a.array))

    def bwd(g):
        _accum(a, g * (1.0 - out.array * out.array))

    return _record(out, (a,), bwd)


def sigmoid(a):
    a = _t(a)
    out = Tensor(special.expit(a.array))

    def bwd(g):
        _accum(a, g * out.array * (1.0 - out.array))

    return _record(out, (a,), bwd)


def relu(a):
    a = _t(a)
    out = Tensor(np.maximum(a.array, 0.0))

    def bwd(g):
        _accum(a, g * (a.array > 0))

    return _record(out, (a,), bwd)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact Gaussian-CDF form: x * Phi(x), not the tanh approximation."""
    a = _t(a)
    phi_cdf = 0.5 * (1.0 + special.erf(a.array * _INV_SQRT2))
    out = Tensor(a.array * phi_cdf)

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.array * a.array)
        _accum(a, g * (phi_cdf + a.array * pdf))

    return _record(out, (a,), bwd)


def absolute(a):
    a = _t(a)
    out = Tensor(np.abs(a.array))

    def bwd(g):
        _accum(a, g * np.sign(a.array))

    return _record(out, (a,), bwd)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = _t(a), _t(b)
    take_a = a.array >= b.array
    out = Tensor(np.where(take_a, a.array, b.array))

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, a.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _record(out, (a, b), bwd)


def minimum(a, b):
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = _t(a), _t(b)
    take_a = a.array <= b.array
    out = Tensor(np.where(take_a, a.array, b.array))

    def bwd(g):
        _accum(a, _unbroadcast(g * take_a, a.shape))
        _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _record(out, (a, b), bwd)


# -------------------------------------------------------------- reductions


def tensor_sum(a, axis=None, keepdims=False):
    a = _t(a)
    out = Tensor(a.array.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            full = np.broadcast_to(g, a.shape)
        else:
            gk = g if keepdims else np.expand_dims(g, axis)
            full = np.broadcast_to(gk, a.shape)
        _accum(a, full)

    return _record(out, (a,), bwd)


def tensor_mean(a, axis=None, keepdims=False):
    a = _t(a)
    if axis is None:
        n = a.array.size
    else:
        n = np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tensor_sum(a, axis, keepdims) * (1.0 / float(n))


def cumsum(a, axis: int):
    a = _t(a)
    out = Tensor(np.cumsum(a.array, axis=axis))

    def bwd(g):
        _accum(a, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _record(out, (a,), bwd)


# -------------------------------------------------------------- structural


def reshape(a, shape):
    a = _t(a)
    out = Tensor(a.array.reshape(shape))

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _record(out, (a,), bwd)


def flip(a, axes):
    a = _t(a)
    out = Tensor(np.flip(a.array, axes))

    def bwd(g):
        _accum(a, np.flip(g, axes))

    return _record(out, (a,), bwd)


def concat(tensors, axis: int):
    tensors = [_t(t) for t in tensors]
    out = Tensor(np.concatenate([t.array for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]

    def bwd(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(t, g[tuple(idx)])
            offset += n

    return _record(out, tuple(tensors), bwd)


def getitem(a, key):
    a = _t(a)
    out = Tensor(a.array[key])

    def bwd(g):
        full = np.zeros_like(a.array)
        full[key] += g
        _accum(a, full)

    return _record(out, (a,), bwd)


def embedding(table: Tensor, ids: np.ndarray):
    """Row lookup `table[ids]`; gradient scatters with repetition-safe adds."""
    out = Tensor(table.array[ids])

    def bwd(g):
        gt = np.zeros_like(table.array)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        _accum(table, gt)

    return _record(out, (table,), bwd)


def gather_rows(a, idx: np.ndarray):
    """out[b] = a[b, idx[b]] for a of shape (B, P, ...)."""
    a = _t(a)
    rows = np.arange(a.shape[0])
    out = Tensor(a.array[rows, idx])

    def bwd(g):
        full = np.zeros_like(a.array)
        full[rows, idx] = g
        _accum(a, full)

    return _record(out, (a,), bwd)


# ------------------------------------------------------------- neural ops


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _t(x), _t(gain), _t(bias)
    mu = x.array.mean(-1, keepdims=True)
    xc = x.array - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.array + bias.array)

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=lead))
        _accum(bias, g.sum(axis=lead))
        gx = g * gain.array
        gx_mean = gx.mean(-1, keepdims=True)
        gxxhat_mean = (gx * xhat).mean(-1, keepdims=True)
        _accum(x, inv * (gx - gx_mean - xhat * gxxhat_mean))

    return _record(out, (x, gain, bias), bwd)


def softmax_cross_entropy(logits, labels: np.ndarray):
    """Mean cross entropy; stabilized with a detached max shift."""
    logits = _t(logits)
    n = logits.shape[0]
    z = logits.array - logits.array.max(-1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(-1, keepdims=True)
    logp = z - np.log(se)
    rows = np.arange(n)
    out = Tensor(-logp[rows, labels].mean())

    def bwd(g):
        p = ez / se
        p[rows, labels] -= 1.0
        _accum(logits, (float(g) / n) * p)

    return _record(out, (logits,), bwd)


def dropout(x, rate: float, rng: np.random.Generator, training: bool):
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return mul(x, Tensor(mask))
