"""Dense float64 tensors with reverse-mode automatic differentiation.

This is a deliberately small engine: it covers exactly the operations the
recommendation graph needs (matrix products, windowed 1-D convolution with a
fused ReLU, elementwise nonlinearities, masked softmax, reductions, row
gather, concatenation, stacking). Every forward op validates that its output
is finite; a NaN/Inf raises :class:`NumericError` instead of propagating.

A :class:`Tensor` produced by an op remembers its parents and a closure that
maps the output gradient to parent gradients. ``backward()`` on a scalar runs
a topological sweep and accumulates into the ``grad`` buffer of every
``requires_grad`` leaf reachable from it.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "add",
    "mul",
    "matmul",
    "dot",
    "conv1d",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "clip",
    "softmax",
    "tsum",
    "tmean",
    "weighted_sum",
    "concat",
    "stack",
    "rows",
    "reshape",
    "dropout",
    "finite_diff_check",
]


def _check_finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value in tensor")
    return arr


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Leaf tensors are created directly; op results carry backward closures.
    ``grad`` is allocated lazily for requires_grad leaves and accumulated by
    ``backward()``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw", "_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple = ()
        self._bw: Optional[Callable] = None
        self._done = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        Raises ContractError if self is not a scalar, or if backward has
        already been run on this node.
        """
        if self.data.ndim != 0:
            raise ContractError("backward requires a scalar (0-d) tensor")
        if self._done:
            raise ContractError("backward already run on this graph; re-run the forward pass")
        self._done = True

        # Iterative topological order (graphs can be deep: LSTM unrolls).
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._bw is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._bw(g)):
                if not parent.requires_grad or pg is None:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = np.array(pg, dtype=np.float64, copy=True)
                else:
                    acc += pg

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(_lift(other), _lift(-1.0)))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, _lift(-1.0)))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __getitem__(self, key):
        return _getitem(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], bw: Callable) -> Tensor:
    _check_finite(data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(parents)
    out._bw = bw if out.requires_grad else None
    out._done = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    x = _lift(x)
    out = np.maximum(x.data, 0.0)
    return _node(out, (x,), lambda g: (g * (x.data > 0),))


def tanh(x: Tensor) -> Tensor:
    x = _lift(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    x = _lift(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    x = _lift(x)
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError below
        out = np.exp(x.data)
    _check_finite(out)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = _lift(x)
    with np.errstate(divide="raise", invalid="raise"):
        try:
            out = np.log(x.data)
        except FloatingPointError as e:
            raise NumericError("log of non-positive value") from e
    return _node(out, (x,), lambda g: (g / x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through only where unclamped."""
    x = _lift(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)
    return _node(out, (x,), lambda g: (g * inside,))


# -- linear algebra --------------------------------------------------------


def _matmul2(a: Tensor, b: Tensor, transpose_b: bool) -> Tensor:
    bt = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    try:
        out = a.data @ bt
    except ValueError as e:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape}") from e

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bt, -1, -2), a.shape)
        gbt = np.swapaxes(a.data, -1, -2) @ g
        if transpose_b:
            gbt = np.swapaxes(gbt, -1, -2)
        return ga, _unbroadcast(gbt, b.shape)

    return _node(out, (a, b), bw)


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product with numpy-style batch broadcasting.

    1-D operands are promoted (row vector on the left, column vector on the
    right) and the corresponding axis is squeezed from the result, so
    vector @ matrix, matrix @ vector and vector @ vector all work.
    """
    a, b = _lift(a), _lift(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError("matmul needs operands of rank >= 1")
    front = a.ndim == 1
    back = b.ndim == 1
    if back and transpose_b:
        raise DimensionError("transpose_b with a 1-D right operand")
    aa = reshape(a, (1,) + a.shape) if front else a
    bb = reshape(b, b.shape + (1,)) if back else b
    out = _matmul2(aa, bb, transpose_b)
    if back:
        out = reshape(out, out.shape[:-1])
    if front:
        out = reshape(out, out.shape[1:])
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two 1-D tensors, returned as a scalar."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
    return matmul(a, b)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Same-length 1-D convolution over the sequence axis with a fused ReLU.

    ``x`` is [M, D_in] or [B, M, D_in]; ``kernel`` is [N_f, W, D_in] with W
    odd; ``bias`` is [N_f]. The input is zero-padded by W//2 on each side so
    the output has shape [..., M, N_f]. ReLU is applied to the convolution
    output, matching the encoder's contextualization step.
    """
    x, kernel, bias = _lift(x), _lift(kernel), _lift(bias)
    if kernel.ndim != 3:
        raise DimensionError(f"kernel must be [N_f, W, D_in], got {kernel.shape}")
    nf, w, din = kernel.shape
    if w % 2 != 1:
        raise DimensionError(f"window size must be odd, got {w}")
    if x.ndim not in (2, 3) or x.shape[-1] != din or x.shape[-2] < 1:
        raise DimensionError(f"conv1d input {x.shape} incompatible with kernel {kernel.shape}")
    if bias.shape != (nf,):
        raise DimensionError(f"bias must be [N_f]={nf}, got {bias.shape}")
    k = w // 2
    m = x.shape[-2]

    pad = [(0, 0)] * x.ndim
    pad[-2] = (k, k)
    padded = np.pad(x.data, pad)
    # windows: [..., M, W, D_in] -> [..., M, W*D_in]
    win = np.lib.stride_tricks.sliding_window_view(padded, w, axis=-2)
    win = np.ascontiguousarray(np.moveaxis(win, -1, -2)).reshape(x.shape[:-1] + (w * din,))
    kmat = kernel.data.reshape(nf, w * din)
    pre = win @ kmat.T + bias.data
    out = np.maximum(pre, 0.0)

    def bw(g):
        gpre = g * (pre > 0)
        gb = gpre.reshape(-1, nf).sum(axis=0)
        gk = (gpre.reshape(-1, nf).T @ win.reshape(-1, w * din)).reshape(kernel.shape)
        gwin = (gpre @ kmat).reshape(x.shape[:-1] + (w, din))
        gpad = np.zeros_like(padded)
        for off in range(w):
            gpad[..., off : off + m, :] += gwin[..., off, :]
        gx = gpad[..., k : k + m, :]
        return gx, gk, gb

    return _node(out, (x, kernel, bias), bw)


# -- softmax and reductions ------------------------------------------------


def softmax(scores: Tensor, mask: Optional[np.ndarray] = None, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` with optional masking.

    ``mask`` is a boolean array broadcastable to ``scores``; masked positions
    receive exactly zero probability. Rows with no unmasked position come out
    as all zeros rather than NaN.
    """
    scores = _lift(scores)
    if scores.data.shape == () or scores.data.shape[axis] == 0:
        raise DimensionError("softmax of an empty tensor")
    if mask is None:
        m = np.ones_like(scores.data, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.data.shape)
    neg = np.where(m, scores.data, -np.inf)
    mx = neg.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(np.where(m, scores.data - mx, 0.0)) * m
    tot = e.sum(axis=axis, keepdims=True)
    out = e / np.where(tot == 0.0, 1.0, tot)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (scores,), bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _node(out, (x,), bw)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), _lift(1.0 / n))


def weighted_sum(weights: Tensor, values: Tensor) -> Tensor:
    """Attention pooling: sum_m weights[..., m] * values[..., m, :]."""
    weights, values = _lift(weights), _lift(values)
    if weights.shape != values.shape[:-1]:
        raise DimensionError(f"weights {weights.shape} do not match values {values.shape}")
    out = np.einsum("...m,...md->...d", weights.data, values.data)

    def bw(g):
        gw = np.einsum("...d,...md->...m", g, values.data)
        gv = np.einsum("...m,...d->...md", weights.data, g)
        return gw, gv

    return _node(out, (weights, values), bw)


# -- shape manipulation ----------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    x = _lift(x)
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(out, tuple(tensors), bw)


def rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D table; output shape is indices.shape + (D,)."""
    table = _lift(table)
    if table.ndim != 2:
        raise DimensionError(f"rows() needs a 2-D table, got {table.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _node(out, (table,), bw)


def _getitem(x: Tensor, key) -> Tensor:
    out = x.data[key]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _node(np.array(out, copy=True), (x,), bw)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if not 0.0 <= p < 1.0:
        raise DimensionError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    x = _lift(x)
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


# -- gradient checking -----------------------------------------------------


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map a tensor to a scalar tensor and be re-runnable. The
    relative error for each component is |a - n| / (|a| + |n| + 1e-8).
    """
    xt = Tensor(x.data.copy(), requires_grad=True)
    f(xt).backward()
    analytic = xt.grad.copy()

    numeric = np.zeros_like(analytic)
    flat = x.data.reshape(-1).copy()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig - eps
        lo = f(Tensor(flat.reshape(x.shape))).item()
        flat[i] = orig
        numeric.reshape(-1)[i] = (hi - lo) / (2.0 * eps)

    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    return float(rel.max()) if rel.size else 0.0
