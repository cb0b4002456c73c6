"""Dense float64 tensors with taped reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its inputs and a
local gradient rule. :func:`backward` orders the reachable operations by
creation (the tape), walks that tape once in reverse and accumulates
gradients into every reachable tensor with ``requires_grad``.

Broadcasting is deliberately narrow: operands must have equal shapes, or one
operand is a scalar, or its shape is a trailing suffix of the other's, or it
has the same rank with singleton axes (the ``keepdims`` reduction pattern).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "DomainError",
    "ContractError",
    "tensor",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "silu",
    "sigmoid",
    "power",
    "elementwise",
    "softmax_lastdim",
    "dilated_causal_conv1d",
    "embedding_lookup",
    "concat",
    "layer_norm",
    "bspline_basis",
]

_ids = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An operation was asked to differentiate outside its domain."""


class ContractError(RuntimeError):
    """A precondition of the autodiff engine was violated."""


class Tensor:
    """A dense float64 array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._rule: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._id = next(_ids)

    # -- basic attributes -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{rg})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], rule, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._rule = rule
    out._op = op
    return out


# -- tape and backward ----------------------------------------------------


@dataclass(frozen=True)
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor


class Tape:
    """Operations reachable from a root, in creation (topological) order."""

    def __init__(self, root: Tensor):
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node._id in seen:
                continue
            seen[node._id] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes = sorted(seen.values(), key=lambda n: n._id)
        self.entries = [TapeEntry(n._op, n._parents, n) for n in nodes if n._rule is not None]
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.entries)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(node) into ``grad`` of every reachable node.

    Gradients add to whatever is already stored; call ``zero_grad`` to reset.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape(loss)
    tape = Tape(loss)
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        out = entry.output
        g = grads.get(out._id)
        if g is None:
            continue
        local = out._rule(g)
        for parent, pg in zip(entry.inputs, local):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg
    for node in tape.nodes:
        g = grads.get(node._id)
        if g is None:
            continue
        if node._grad is not None:
            node._grad = node._grad + g
        elif node._parents:
            # intermediate gradients may alias each other; store them read-only instead of copying
            g = g.view()
            g.setflags(write=False)
            node._grad = g
        else:
            node._grad = g.copy()
    return tape


# -- broadcasting helpers -------------------------------------------------


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b or len(a) == 0 or len(b) == 0:
        return
    if int(np.prod(a)) == 1 or int(np.prod(b)) == 1:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] == short:
        return
    if len(a) == len(b) and all(x == y or x == 1 or y == 1 for x, y in zip(a, b)):
        return
    raise DimensionError(f"{op}: cannot combine shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def rule(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), rule, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    if a.requires_grad and np.any(a.data <= 0):
        raise DomainError("log of a non-positive value with gradient requested")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    ad = a.data
    return _make(out, (a,), lambda g: (g / ad,), "log")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    return _make(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),), "silu")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def power(a, p: float) -> Tensor:
    """``a ** p`` for a scalar exponent ``p``."""
    a = _as_tensor(a)
    p = float(p)
    if a.requires_grad and not p.is_integer() and np.any(a.data <= 0):
        raise DomainError(f"power {p} of a non-positive base with gradient requested")
    x = a.data
    out = x**p
    return _make(out, (a,), lambda g: (g * p * x ** (p - 1.0),), "pow")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "silu": silu,
    "sigmoid": sigmoid,
    "pow": power,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch one of the named elementwise operations."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes batch.

    ``b`` may be a plain 2-D matrix shared by every batch entry of ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions disagree for shapes {a.shape} and {b.shape}")
    if b.ndim > a.ndim:
        raise DimensionError(f"matmul: cannot batch shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def rule(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(ad @ bd, (a, b), rule, "matmul")


# -- reductions and shape ops ---------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out), (a,), rule, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, key) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.asarray(a.data[key]), (a,), rule, "slice")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of an empty sequence")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise DimensionError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def rule(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, rule, "concat")


# -- neural-network primitives -------------------------------------------


def softmax_lastdim(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last axis, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),), "softmax")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layer_norm: scale {gamma.shape} / shift {beta.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def rule(g):
        flat = g.reshape(-1, n)
        dgamma = (flat * xhat.reshape(-1, n)).sum(axis=0)
        dbeta = flat.sum(axis=0)
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _make(xhat * gd + beta.data, (x, gamma, beta), rule, "layer_norm")


def dilated_causal_conv1d(x, kernel, dilation: int = 1) -> Tensor:
    """Left-padded dilated convolution: ``x`` is ``[..., L, C_in]``, ``kernel`` ``[K, C_in, C_out]``.

    Output row ``t`` mixes input rows ``t - (K-1-k)*dilation`` for ``k < K``,
    so nothing later than ``t`` contributes.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if dilation < 1:
        raise ValueError("dilation must be a positive integer")
    if kernel.ndim != 3 or x.ndim < 2 or x.shape[-1] != kernel.shape[1]:
        raise DimensionError(f"dilated_causal_conv1d: input {x.shape} vs kernel {kernel.shape}")
    K = kernel.shape[0]
    L = x.shape[-2]
    pad = (K - 1) * dilation
    xp = np.zeros(x.shape[:-2] + (L + pad, x.shape[-1]))
    xp[..., pad:, :] = x.data
    w = kernel.data
    out = np.zeros(x.shape[:-2] + (L, w.shape[2]))
    for k in range(K):
        out += xp[..., k * dilation : k * dilation + L, :] @ w[k]

    def rule(g):
        gx = None
        gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[..., k * dilation : k * dilation + L, :] += g @ w[k].T
            gx = gxp[..., pad:, :]
        if kernel.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack(
                [
                    xp[..., k * dilation : k * dilation + L, :].reshape(-1, xp.shape[-1]).T @ g2
                    for k in range(K)
                ]
            )
        return gx, gw

    return _make(out, (x, kernel), rule, "dcc")


def embedding_lookup(table, index) -> Tensor:
    """Rows of ``table`` picked by an integer index array of any shape."""
    table = _as_tensor(table)
    idx = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range for table of {table.shape[0]} rows")
    shape = table.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(table.data[idx], (table,), rule, "embedding")


def uniform_knots(lo: float, hi: float, grid_size: int, order: int) -> np.ndarray:
    """Uniform knot vector on ``[lo, hi]`` extended by ``order`` knots at each end."""
    h = (hi - lo) / grid_size
    return lo + h * np.arange(-order, grid_size + order + 1, dtype=np.float64)


def bspline_basis(x, lo: float, hi: float, grid_size: int, order: int) -> Tensor:
    """B-spline basis values ``[..., n, grid_size + order]`` for inputs ``[..., n]``.

    Inputs are clamped to ``[lo, hi]`` so values outside the grid reuse the
    boundary basis (zero gradient there). ``x == hi`` belongs to the last cell.
    """
    x = _as_tensor(x)
    h = (hi - lo) / grid_size
    xd = x.data
    xc = np.clip(xd, lo, hi)
    n_basis = grid_size + order
    # knot t_i sits at lo + (i - order) * h; the active cell [t_c, t_c+1) has c in [order, order + G - 1]
    pos = (xc - lo) / h
    with np.errstate(invalid="ignore"):  # NaN inputs are reported by the caller
        cell = np.clip(np.floor(pos).astype(np.int64), 0, grid_size - 1)
    u = pos - cell  # local coordinate in [0, 1]
    # Cox-de Boor restricted to the order + 1 bases that are nonzero on the cell
    N = np.ones(xd.shape + (1,))
    lower = N
    for p in range(1, order + 1):
        nxt = np.zeros(xd.shape + (p + 1,))
        # basis r (0..p-1 of the previous level) splits into rising and falling parts
        for r in range(p):
            left = (u + (p - 1 - r)) / p  # (x - t_start) / (p h)
            nxt[..., r] += (1.0 - left) * N[..., r]
            nxt[..., r + 1] += left * N[..., r]
        if p == order:
            lower = N
        N = nxt
    B = np.zeros(xd.shape + (n_basis,))
    idx = cell[..., None] + np.arange(order + 1)
    np.put_along_axis(B, idx, N, axis=-1)
    if order == 0:
        return _make(B, (x,), lambda g: (np.zeros_like(xd),), "bspline")
    # d/dx of an order-p basis is (N_{p-1,i} - N_{p-1,i+1}) / h for uniform knots
    dN = np.zeros(xd.shape + (order + 1,))
    dN[..., 1:] += lower
    dN[..., :-1] -= lower
    dB = np.zeros(xd.shape + (n_basis,))
    np.put_along_axis(dB, idx, dN / h, axis=-1)
    inside = ((xd >= lo) & (xd <= hi)).astype(np.float64)

    def rule(g):
        return ((g * dB).sum(axis=-1) * inside,)

    return _make(B, (x,), rule, "bspline")
