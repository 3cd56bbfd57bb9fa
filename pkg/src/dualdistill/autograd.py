"""Small reverse-mode automatic differentiation core.

Everything is computed in 64-bit floats on numpy arrays.  The graph is
define-by-run: each operation records its parents and a backward closure
on the result tensor, so the tape is rebuilt on every forward pass and
there is no global state to share between threads.  ``backward`` walks
the recorded graph once in reverse topological order and accumulates
gradients into every tensor that requires them; the caller is
responsible for zeroing gradients between steps.

Only the operations the reference models and losses need are provided.
NaN or Inf anywhere is treated as a contract violation and raised as
``NumericError`` at tensor construction time, which catches the problem
at the op that produced it.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .errors import GraphError, NumericError, ShapeError

Scalar = Union[int, float]


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    ``_parents`` and ``_backward`` describe how this tensor was produced;
    leaves have neither.  ``grad`` stays ``None`` until a backward pass
    deposits something into it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op: str = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Iterable["Tensor"], op: str,
                backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> "Tensor":
        parents = tuple(parents)
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
            out._op = op
        return out

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """A constant view of this tensor; gradients never flow through it."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        raise TypeError("tensor/tensor division is not part of this op set")

    def __neg__(self):
        return scale(self, -1.0)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    # -- backward -------------------------------------------------------------

    def backward(self):
        """Reverse sweep from a scalar loss.

        Gradients accumulate into ``.grad`` of every reachable tensor with
        ``requires_grad``; successive calls keep adding until the caller
        resets them.
        """
        if self.data.ndim != 0:
            raise GraphError("backward requires a scalar loss, got shape %r" % (self.data.shape,))
        if not self.requires_grad:
            raise GraphError("loss does not require grad; nothing to differentiate")

        order = _toposort(self)
        flowing: dict[int, np.ndarray] = {id(self): np.asarray(1.0)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg


def _toposort(root: Tensor) -> list:
    """Parents-before-children ordering of the graph below ``root``.

    Iterative DFS so long chains cannot hit the recursion limit.  Visits
    each node exactly once.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise ops ----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._result(out, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._result(out, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._result(out, (a, b), "mul", backward)


def scale(a: Tensor, c: Scalar) -> Tensor:
    c = float(c)
    out = a.data * c

    def backward(g):
        return (g * c,)

    return Tensor._result(out, (a,), "scale", backward)


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is taken as 0
    mask = a.data > 0.0
    out = np.where(mask, a.data, 0.0)

    def backward(g):
        return (g * mask,)

    return Tensor._result(out, (a,), "relu", backward)


def tlog(a: Tensor) -> Tensor:
    """Natural log.  Non-positive entries yield NaN/Inf and hence NumericError."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return Tensor._result(out, (a,), "log", backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input was in range."""
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * mask,)

    return Tensor._result(out, (a,), "clamp", backward)


# -- reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return Tensor._result(out, (a,), "sum", backward)


def tmean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.data.shape).copy(),)

    return Tensor._result(out, (a,), "mean", backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return Tensor._result(out, (a,), "reshape", backward)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands, got %r and %r"
                         % (a.data.shape, b.data.shape))
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul inner dimensions differ: %r vs %r"
                         % (a.data.shape, b.data.shape))
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(out, (a, b), "matmul", backward)


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid (no padding) 1-D cross-correlation.

    ``x`` is (channels, length) for a single example or (batch, channels,
    length); ``kernels`` is (out_channels, in_channels, k).  Output length
    is floor((length - k) / stride) + 1.
    """
    if stride < 1:
        raise ShapeError("stride must be >= 1, got %d" % stride)
    if kernels.data.ndim != 3:
        raise ShapeError("kernels must be (out, in, k), got %r" % (kernels.data.shape,))
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3:
        raise ShapeError("input must be (channels, len) or (batch, channels, len), got %r"
                         % (x.data.shape,))
    B, C, L = xd.shape
    O, Ck, k = kernels.data.shape
    if Ck != C:
        raise ShapeError("kernel channel count %d does not match input channels %d" % (Ck, C))
    if k > L:
        raise ShapeError("kernel size %d exceeds input length %d" % (k, L))
    Lp = (L - k) // stride + 1
    # windows[b, c, t, j] = x[b, c, t*stride + j]
    windows = np.lib.stride_tricks.sliding_window_view(xd, k, axis=2)[:, :, ::stride, :][:, :, :Lp, :]
    out = np.einsum("bctj,ocj->bot", windows, kernels.data, optimize=True)
    if single:
        out = out[0]

    def backward(g):
        gb = g[None] if single else g
        gk = np.einsum("bot,bctj->ocj", gb, windows, optimize=True)
        gx = np.zeros_like(xd)
        for j in range(k):
            gx[:, :, j:j + stride * Lp:stride] += np.einsum(
                "bot,oc->bct", gb, kernels.data[:, :, j], optimize=True)
        return gx[0] if single else gx, gk

    return Tensor._result(out, (x, kernels), "conv1d", backward)


# -- softmax ------------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, with max subtraction for stability.

    Subtracting the (detached) row max leaves both the value and the
    gradient unchanged, since softmax is invariant to constant shifts.
    """
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return Tensor._result(out, (a,), "softmax", backward)


# -- gradient checking --------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
               max_retries: int = 32) -> float:
    """Compare reverse-mode gradients of ``f`` at ``x`` against central differences.

    Returns the maximum over coordinates of |analytic - numeric| /
    max(1, |analytic|, |numeric|).  ``f`` must map a tensor to a scalar
    tensor.  Points that land a relu pre-activation within 1e-6 of its
    kink are nudged deterministically and re-tried, since the two-sided
    difference is meaningless across the kink.  Never raises; any
    evaluation failure reports as inf.
    """
    try:
        x0 = np.array(x.data, dtype=np.float64)
        rng = np.random.default_rng(12345)
        for _ in range(max_retries):
            leaf = Tensor(x0, requires_grad=True)
            y = f(leaf)
            if _near_relu_kink(y, tol=1e-6):
                x0 = x0 + rng.uniform(1e-4, 2e-4, size=x0.shape) * np.where(
                    rng.random(x0.shape) < 0.5, -1.0, 1.0)
                continue
            break
        else:
            return float("inf")

        y.backward()
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

        numeric = np.zeros_like(x0)
        flat = x0.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(Tensor(x0)).data)
            flat[i] = orig - step
            lo = float(f(Tensor(x0)).data)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * step)

        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        err = np.abs(analytic - numeric) / denom
        return float(err.max()) if err.size else 0.0
    except Exception:
        return float("inf")


def _near_relu_kink(root: Tensor, tol: float) -> bool:
    """True if any relu node under ``root`` has an input within tol of zero."""
    stack, seen = [root], set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._op == "relu":
            pre = node._parents[0].data
            if pre.size and np.abs(pre).min() < tol:
                return True
        stack.extend(node._parents)
    return False
