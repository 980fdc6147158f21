"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every trainable quantity in the package flows through this module. The
design is deliberately small: a `Tensor` wraps a float64 ndarray, ops
append entries to the active `Tape`, and `grad` walks the tape backwards.
A tape is created per batch and dropped afterwards; forward evaluation
outside a `recording()` block pays no bookkeeping cost.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError

__all__ = [
    "Tensor", "Tape", "recording", "constant", "grad",
    "add", "sub", "mul", "neg", "matmul", "sigmoid", "tanh", "exp", "log",
    "tsum", "tmean", "concat", "gather_rows", "softmax_xent", "conv2d",
    "reshape", "transpose", "softmax", "log_softmax",
]

# Checked after every recorded op; cheap relative to the op itself.
CHECK_FINITE = True

_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of one forward pass. Reset by creating a new one."""

    def __init__(self) -> None:
        self.entries: list[Tensor] = []


@contextlib.contextmanager
def recording(tape: Tape | None = None):
    """Activate a tape for the duration of the block."""
    global _TAPE
    prev = _TAPE
    _TAPE = tape if tape is not None else Tape()
    try:
        yield _TAPE
    finally:
        _TAPE = prev


class Tensor:
    """A float64 array plus, when recorded, the closure to backprop through it."""

    __slots__ = ("data", "parents", "_backward", "grad", "op", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.grad: np.ndarray | None = None
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    # Operator sugar; floats/arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def constant(data) -> Tensor:
    """A non-trainable tensor (labels, masks, fixed inputs)."""
    return Tensor(data, requires_grad=False, op="const")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _make(out: np.ndarray, parents: tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    """Create an op result, recording it when a tape is active."""
    t = Tensor(out, op=op)
    if CHECK_FINITE and not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    if _TAPE is not None and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.parents = parents
        t._backward = backward
        _TAPE.entries.append(t)
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), "mul", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return _make(-a.data, (a,), "neg", backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out, (a, b), "matmul", backward)


def sigmoid(a: Tensor) -> Tensor:
    # Stable on both tails.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), "sigmoid", backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), "tanh", backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        _accum(a, g * out)

    return _make(out, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(out, (a,), "log", backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(out, (a,), "sum", backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), constant(1.0 / n))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return _make(out, tuple(parts), "concat", backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out, (a,), "reshape", backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ContractError("transpose expects a 2-D tensor")
    out = a.data.T

    def backward(g):
        _accum(a, g.T)

    return _make(out, (a,), "transpose", backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Row lookup `a[idx]`; the workhorse behind embedding tables."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ContractError("gather_rows expects a 1-D index array")
    if a.data.ndim < 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0])):
        raise ContractError("gather_rows index out of range")
    out = a.data[idx]

    def backward(g):
        if not a.requires_grad:
            return
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _make(out, (a,), "gather_rows", backward)


def softmax_xent(logits: Tensor, targets) -> Tensor:
    """Per-row cross-entropy −log softmax(logits)[target]; shape (B,)."""
    targets = np.asarray(targets, dtype=np.intp)
    z = logits.data
    if z.ndim != 2 or targets.shape != (z.shape[0],):
        raise ContractError("softmax_xent expects (B, V) logits and (B,) targets")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    rows = np.arange(z.shape[0])
    out = -logp[rows, targets]

    def backward(g):
        gz = ez / sez
        gz[rows, targets] -= 1.0
        _accum(logits, gz * g[:, None])

    return _make(out, (logits,), "softmax_xent", backward)


# ---------------------------------------------------------------------------
# convolution (valid padding, square stride) via cached im2col indices

_COL_IDX_CACHE: dict[tuple, tuple[np.ndarray, int, int]] = {}


def _col_indices(h, w, c, kh, kw, stride):
    key = (h, w, c, kh, kw, stride)
    hit = _COL_IDX_CACHE.get(key)
    if hit is not None:
        return hit
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    # flat indices into an (h, w, c) volume for each output position's patch
    idx = np.empty((oh * ow, kh * kw * c), dtype=np.intp)
    n = 0
    for i in range(oh):
        for j in range(ow):
            patch = []
            for di in range(kh):
                for dj in range(kw):
                    base = ((i * stride + di) * w + (j * stride + dj)) * c
                    patch.extend(range(base, base + c))
            idx[n] = patch
            n += 1
    _COL_IDX_CACHE[key] = (idx, oh, ow)
    return idx, oh, ow


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """x: (B, H, W, Cin), w: (kh, kw, Cin, Cout), b: (Cout,) -> (B, H', W', Cout)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractError("conv2d expects (B,H,W,C) input and (kh,kw,Cin,Cout) kernel")
    bsz, h, ww_, cin = x.data.shape
    kh, kw, cin2, cout = w.data.shape
    if cin != cin2:
        raise ContractError("conv2d channel mismatch")
    idx, oh, ow = _col_indices(h, ww_, cin, kh, kw, stride)
    flat = x.data.reshape(bsz, -1)
    cols = flat[:, idx.ravel()].reshape(bsz * oh * ow, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat + b.data).reshape(bsz, oh, ow, cout)

    def backward(g):
        gmat = g.reshape(bsz * oh * ow, cout)
        if w.requires_grad:
            _accum(w, (cols.T @ gmat).reshape(w.data.shape))
        if b.requires_grad:
            _accum(b, gmat.sum(axis=0))
        if x.requires_grad:
            gcols = gmat @ wmat.T      # (B*oh*ow, kh*kw*cin)
            gx = np.zeros((bsz, h * ww_ * cin), dtype=np.float64)
            gcols = gcols.reshape(bsz, -1)
            np.add.at(gx, (slice(None), idx.ravel()), gcols)
            _accum(x, gx.reshape(x.data.shape))

    return _make(out, (x, w, b), "conv2d", backward)


# ---------------------------------------------------------------------------
# plain-array helpers (forward only)


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax on an ndarray (or Tensor data)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite values passed to softmax")
    zmax = z.max(axis=axis, keepdims=True)
    ez = np.exp(z - zmax)
    return ez / ez.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    zmax = z.max(axis=axis, keepdims=True)
    s = z - zmax
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------


def grad(loss: Tensor, params: Iterable[Tensor], tape: Tape) -> list[np.ndarray]:
    """Gradients of a recorded scalar loss w.r.t. `params` (zeros off-path)."""
    if loss.data.size != 1:
        raise ContractError(f"grad expects a scalar loss, got shape {loss.data.shape}")
    params = list(params)
    for p in params:
        p.grad = None
    loss.grad = np.ones_like(loss.data)
    for t in reversed(tape.entries):
        if t.grad is not None and t._backward is not None:
            t._backward(t.grad)
            t.grad = None  # free intermediate buffers as we go
    out = []
    for p in params:
        out.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        p.grad = None
    return out
