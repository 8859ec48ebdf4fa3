"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op records a node carrying a monotonically increasing
node id. Parents are always recorded before children, so walking the
reachable nodes in decreasing id order is a valid reverse topological order;
that ordered walk is the tape.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "tensor",
    "parameter",
    "matmul",
    "softmax",
    "log_softmax",
    "gelu",
    "layernorm",
    "depthwise_conv1d",
    "cross_entropy_nll",
    "sequence_nll",
    "embedding",
    "backward",
    "gradcheck",
    "numerical_grad",
    "rel_error",
    "ShapeError",
]


class ShapeError(ValueError):
    pass


_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Record a node if any parent needs a gradient."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def reciprocal(a: Tensor) -> Tensor:
    r = 1.0 / a.data
    return _make(r, (a,), lambda g: (-g * r * r,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _make(a.data * m, (a,), lambda g: (g * m,))


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GeLU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return _make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


# -- shape ops -----------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a: Tensor, a1: int, a2: int) -> Tensor:
    return _make(np.swapaxes(a.data, a1, a2), (a,), lambda g: (np.swapaxes(g, a1, a2),))


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([p.data for p in parts], axis=axis),
        tuple(parts),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / float(n))


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # batched activations times a weight matrix: fold the leading axes
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out_shape = a.shape[:-1] + (n,)

        def bw_fold(g):
            g2 = g.reshape(-1, n)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _make((a2 @ b.data).reshape(out_shape), (a, b), bw_fold)

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# -- normalisation and probabilities ---------------------------------------------


def _masked(x: np.ndarray, mask):
    return x if mask is None else np.where(mask, x, -np.inf)


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax. ``mask`` (bool, broadcastable) keeps True entries."""
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("softmax received non-finite input")
    z = _masked(x.data, mask)
    top = np.max(z, axis=axis, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise ValueError("softmax mask leaves a row with no admissible entry")
    e = np.exp(z - top)
    p = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return _make(p, (x,), bw)


def _log_softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("log_softmax received non-finite input")
    lp = _log_softmax_np(x.data, axis)
    p = np.exp(lp)
    return _make(lp, (x,), lambda g: (g - p * np.sum(g, axis=axis, keepdims=True),))


def layernorm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply optional gain and bias."""
    n = x.shape[-1]
    if n < 2:
        raise ShapeError(f"layernorm needs a normalisation extent >= 2, got {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g_arr = None if gain is None else gain.data
    y = xhat if g_arr is None else xhat * g_arr
    if bias is not None:
        y = y + bias.data
    parents = tuple(p for p in (x, gain, bias) if p is not None)

    def bw(g):
        gx_hat = g if g_arr is None else g * g_arr
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        out = [gx]
        if gain is not None:
            out.append(_unbroadcast(g * xhat, gain.shape))
        if bias is not None:
            out.append(_unbroadcast(g, bias.shape))
        return tuple(out)

    return _make(y, parents, bw)


def depthwise_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 1-D cross-correlation along the sequence axis.

    ``x`` is (..., L, d) and ``kernel`` is (w, d) with odd ``w``; zero
    padding keeps the output length at L.
    """
    w = kernel.shape[0]
    if w % 2 == 0:
        raise ShapeError(f"depthwise_conv1d needs an odd kernel width, got {w}")
    if kernel.shape[-1] != x.shape[-1]:
        raise ShapeError(f"channel mismatch: x {x.shape} vs kernel {kernel.shape}")
    L = x.shape[-2]
    pad = w // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    k = kernel.data
    out = np.zeros_like(x.data)
    for j in range(w):
        out += xp[..., j:j + L, :] * k[j]

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(k)
        lead = tuple(range(g.ndim - 1))
        for j in range(w):
            gxp[..., j:j + L, :] += g * k[j]
            gk[j] = np.sum(g * xp[..., j:j + L, :], axis=lead)
        return gxp[..., pad:pad + L, :], gk

    return _make(out, (x, kernel), bw)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"token id out of range for vocabulary of size {V}")
    return _make(table.data[ids], (table,), bw)


# -- losses ----------------------------------------------------------------------


def _check_targets(targets: np.ndarray, V: int) -> None:
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        bad = int(targets.max()) if targets.max() >= V else int(targets.min())
        raise IndexError(f"target id {bad} outside vocabulary of size {V}")


def cross_entropy_nll(logits: Tensor, targets, reduce: str = "mean") -> Tensor:
    """Negative log-likelihood of ``targets`` (T,) under softmax(logits (T, V))."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} incompatible with targets {targets.shape}")
    T, V = logits.shape
    if T < 1:
        raise ShapeError("cross_entropy_nll needs at least one target")
    _check_targets(targets, V)
    if reduce not in ("mean", "sum"):
        raise ValueError(f"reduce must be 'mean' or 'sum', got {reduce!r}")
    lp = _log_softmax_np(logits.data, -1)
    rows = np.arange(T)
    total = -lp[rows, targets].sum()
    scale = 1.0 / T if reduce == "mean" else 1.0

    def bw(g):
        d = np.exp(lp)
        d[rows, targets] -= 1.0
        return (d * (g * scale),)

    return _make(np.asarray(total * scale), (logits,), bw)


def sequence_nll(logits: Tensor, targets: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Per-row mean NLL for padded batches.

    ``logits`` (B, T, V), ``targets`` (B, T); only the first ``lengths[b]``
    positions of row b count. Returns a (B,) tensor.
    """
    targets = np.asarray(targets, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    B, T, V = logits.shape
    if np.any(lengths < 1):
        raise ShapeError("every sequence needs at least one target")
    valid = np.arange(T)[None, :] < lengths[:, None]
    safe = np.where(valid, targets, 0)
    _check_targets(safe, V)
    lp = _log_softmax_np(logits.data, -1)
    bi, ti = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
    picked = lp[bi, ti, safe] * valid
    out = -picked.sum(axis=1) / lengths

    def bw(g):
        d = np.exp(lp)
        d[bi, ti, safe] -= 1.0
        w = (g / lengths)[:, None] * valid
        return (d * w[:, :, None],)

    return _make(out, (logits,), bw)


# -- differentiation -----------------------------------------------------------


class Tape:
    """Reverse-ordered view of the recorded graph reachable from one output."""

    def __init__(self, output: Tensor):
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            t = stack.pop()
            if t.node_id in seen or not t.requires_grad:
                continue
            seen[t.node_id] = t
            stack.extend(t._parents)
        self.nodes = [seen[k] for k in sorted(seen, reverse=True)]

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.is_leaf]


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in tape.nodes:
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(parent.node_id)
            grads[parent.node_id] = pg if prev is None else prev + pg
    return tape


# -- finite-difference checking ------------------------------------------------


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5, indices: Iterable | None = None) -> dict:
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (perturbed in place)."""
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            out[int(i)] = (fp - fm) / (2.0 * h)
    return out


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    With ``max_entries`` set, that many entries per input are sampled.
    """
    for t in inputs:
        t.zero_grad()
    backward(f())
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        n = t.data.size
        if max_entries is None or max_entries >= n:
            idx = range(n)
        else:
            idx = rng.choice(n, size=max_entries, replace=False)
        num = numerical_grad(f, t, h, idx)
        ga = t.grad.reshape(-1)
        for i, v in num.items():
            worst = max(worst, rel_error(float(ga[i]), v))
    return worst
