"""Minimal reverse-mode autodiff over dense numpy arrays.

Every learnable computation in this package is expressed through
:class:`DiffArray` and the op functions below.  Each op carries an explicit
analytic backward rule; ``grad_check`` compares those rules against central
finite differences.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericsError(ValueError):
    pass


_DEBUG_CHECKS = False
_GRAD_ENABLED = True


def set_debug_checks(on: bool) -> None:
    """Enable NaN/Inf assertions after every forward and backward op."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(on)


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(a: np.ndarray, where: str) -> None:
    if _DEBUG_CHECKS and not np.isfinite(a).all():
        raise NumericsError(f"non-finite values after {where}")


class DiffArray:
    """Dense float array with value and (optional) gradient buffer.

    ``grad`` is populated by ``backward`` and accumulates across calls until
    ``zero_grad``.  Arrays created under ``no_grad`` or from non-trainable
    inputs carry no graph edges.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[DiffArray, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def T(self) -> "DiffArray":
        return transpose(self)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float(self.values)

    def detach(self) -> "DiffArray":
        return DiffArray(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values, dtype=np.float64)
        self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this node; accumulates into leaf ``grad``s."""
        if seed is None:
            if self.values.size != 1:
                raise NumericsError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.values, dtype=np.float64)
        order: list[DiffArray] = []
        seen: set[int] = set()
        stack: list[tuple[DiffArray, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=np.float64))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
                _check_finite(node.grad, "backward")

    # -- operator sugar -------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"DiffArray(shape={self.shape}, requires_grad={self.requires_grad})"


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _make(values: np.ndarray, parents: Sequence[DiffArray],
          backward_fn: Callable[[np.ndarray], None]) -> DiffArray:
    _check_finite(values, "forward")
    out = DiffArray(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and linear ops ----------------------------------------

def add(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    out_v = a.values + b.values

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_v, (a, b), bw)


def sub(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    out_v = a.values - b.values

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.shape))

    return _make(out_v, (a, b), bw)


def mul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.values, b.values
    out_v = av * bv

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * bv, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * av, b.shape))

    return _make(out_v, (a, b), bw)


def div(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.values, b.values
    out_v = av / bv

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / bv, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * av / (bv * bv), b.shape))

    return _make(out_v, (a, b), bw)


def matmul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    if a.ndim != 2 or b.ndim != 2:
        raise NumericsError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    out_v = av @ bv

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ bv.T)
        if b.requires_grad:
            b._accumulate(av.T @ g)

    return _make(out_v, (a, b), bw)


def transpose(a) -> DiffArray:
    a = as_diff(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.values.T, (a,), bw)


def reshape(a, shape) -> DiffArray:
    a = as_diff(a)
    old = a.shape

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old))

    return _make(a.values.reshape(shape), (a,), bw)


def concat(arrays: Iterable[DiffArray], axis: int = 0) -> DiffArray:
    arrs = [as_diff(x) for x in arrays]
    if not arrs:
        raise NumericsError("concat of zero arrays")
    out_v = np.concatenate([x.values for x in arrs], axis=axis)
    offsets = np.cumsum([x.shape[axis] for x in arrs])[:-1]

    def bw(g):
        for x, piece in zip(arrs, np.split(g, offsets, axis=axis)):
            if x.requires_grad:
                x._accumulate(piece)

    return _make(out_v, arrs, bw)


def getitem(a, idx) -> DiffArray:
    """Basic (non-fancy) indexing; backward scatters into the source shape."""
    a = as_diff(a)

    def bw(g):
        if a.requires_grad:
            buf = np.zeros_like(a.values, dtype=np.float64)
            buf[idx] += g
            a._accumulate(buf)

    return _make(a.values[idx], (a,), bw)


def take_rows(a, indices) -> DiffArray:
    """Row gather along axis 0 (embedding lookup); duplicates accumulate."""
    a = as_diff(a)
    idx = np.asarray(indices, dtype=np.intp)

    def bw(g):
        if a.requires_grad:
            buf = np.zeros_like(a.values, dtype=np.float64)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _make(a.values[idx], (a,), bw)


def sum_(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    out_v = a.values.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).astype(np.float64))

    return _make(out_v, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(a, axis: int, keepdims: bool = False) -> DiffArray:
    """Max along ``axis``; gradient flows to the first (lowest-index) argmax."""
    a = as_diff(a)
    av = a.values
    out_v = av.max(axis=axis, keepdims=keepdims)
    idx = np.argmax(av, axis=axis)
    mask = np.zeros_like(av)
    np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)

    def bw(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(mask * gg)

    return _make(out_v, (a,), bw)


def relu(a) -> DiffArray:
    a = as_diff(a)
    pos = a.values > 0

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * pos)

    return _make(np.maximum(a.values, 0.0), (a,), bw)


def leaky_relu(a, alpha: float = 0.2) -> DiffArray:
    a = as_diff(a)
    pos = a.values > 0
    slope = np.where(pos, 1.0, alpha)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * slope)

    return _make(np.where(pos, a.values, alpha * a.values), (a,), bw)


def exp(a) -> DiffArray:
    a = as_diff(a)
    out_v = np.exp(a.values)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out_v)

    return _make(out_v, (a,), bw)


def log(a) -> DiffArray:
    a = as_diff(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / a.values)

    return _make(np.log(a.values), (a,), bw)


def power(a, p: float) -> DiffArray:
    a = as_diff(a)
    av = a.values
    out_v = av ** p

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * p * av ** (p - 1.0))

    return _make(out_v, (a,), bw)


def softmax(a, axis: int = -1) -> DiffArray:
    """Numerically stable softmax along ``axis``; rows sum to 1."""
    a = as_diff(a)
    if a.shape[axis] == 0:
        raise NumericsError("softmax over an empty axis")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_v = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        if a.requires_grad:
            dot = (g * out_v).sum(axis=axis, keepdims=True)
            a._accumulate(out_v * (g - dot))

    return _make(out_v, (a,), bw)


def log_softmax(a, axis: int = -1) -> DiffArray:
    a = as_diff(a)
    if a.shape[axis] == 0:
        raise NumericsError("log_softmax over an empty axis")
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    out_v = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out_v)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_v, (a,), bw)


def stop_gradient(a) -> DiffArray:
    return as_diff(a).detach()


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> DiffArray:
    """Rows scaled to unit L2 norm (composite, fully differentiable)."""
    a = as_diff(a)
    sq = sum_(mul(a, a), axis=axis, keepdims=True)
    return mul(a, power(add(sq, eps), -0.5))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> DiffArray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = as_diff(x)
    mu = mean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    normed = mul(centered, power(add(var, eps), -0.5))
    return add(mul(normed, gain), bias)


def cross_entropy(logits, target_index: int | np.ndarray) -> DiffArray:
    """Mean softmax cross-entropy.

    ``logits`` is (n, k) with integer targets of length n, or (k,) with a
    single integer target.
    """
    logits = as_diff(logits)
    if logits.ndim == 1:
        ls = log_softmax(reshape(logits, (1, -1)), axis=-1)
        return mul(getitem(ls, (0, int(target_index))), -1.0)
    ls = log_softmax(logits, axis=-1)
    idx = np.asarray(target_index, dtype=np.intp)
    rows = np.arange(logits.shape[0])
    picked = getitem(ls, (rows, idx))
    return mul(mean(picked), -1.0)


# -- MLP ---------------------------------------------------------------

_ACTIVATIONS = ("relu", "leaky_relu", "none")


@dataclass(frozen=True)
class MlpSpec:
    """Widths and activation for a stack of affine layers.

    The activation is applied between layers, never after the final one.
    ``leaky_relu`` uses slope 0.2.
    """

    widths: tuple[int, ...]
    activation: str = "relu"
    bias: bool = True

    def __post_init__(self):
        if len(self.widths) < 1:
            raise NumericsError("MlpSpec needs at least one layer")
        if any(w <= 0 for w in self.widths):
            raise NumericsError(f"MlpSpec widths must be positive, got {self.widths}")
        if self.activation not in _ACTIVATIONS:
            raise NumericsError(f"unknown activation {self.activation!r}")


def uniform_init(shape, fan_in: int, rng: np.random.Generator) -> DiffArray:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) trainable array."""
    bound = 1.0 / math.sqrt(max(1, fan_in))
    return DiffArray(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_mlp(spec: MlpSpec, in_dim: int, rng: np.random.Generator,
             prefix: str = "mlp") -> dict[str, DiffArray]:
    params: dict[str, DiffArray] = {}
    d = in_dim
    for j, w in enumerate(spec.widths):
        params[f"{prefix}.w{j}"] = uniform_init((d, w), d, rng)
        if spec.bias:
            params[f"{prefix}.b{j}"] = uniform_init((w,), d, rng)
        d = w
    return params


def mlp_forward(x, spec: MlpSpec, params: dict[str, DiffArray],
                prefix: str = "mlp") -> DiffArray:
    x = as_diff(x)
    if x.ndim != 2:
        raise NumericsError(f"mlp_forward expects (n, d) input, got {x.shape}")
    last = len(spec.widths) - 1
    h = x
    for j in range(len(spec.widths)):
        w = params[f"{prefix}.w{j}"]
        if h.shape[1] != w.shape[0]:
            raise NumericsError(
                f"mlp input width {h.shape[1]} does not match layer {j} ({w.shape[0]})")
        h = matmul(h, w)
        if spec.bias:
            h = add(h, params[f"{prefix}.b{j}"])
        if j != last:
            if spec.activation == "relu":
                h = relu(h)
            elif spec.activation == "leaky_relu":
                h = leaky_relu(h, 0.2)
    return h


# -- gradient checking ---------------------------------------------------

def zero_grads(params: Iterable[DiffArray] | dict[str, DiffArray]) -> None:
    vals = params.values() if isinstance(params, dict) else params
    for p in vals:
        p.zero_grad()


def grad_check(f: Callable[[], DiffArray], params: dict[str, DiffArray],
               eps: float = 1e-5, tol: float = 1e-4,
               max_entries: int | None = None, seed: int = 0) -> dict:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must return a scalar DiffArray computed from ``params``.  When
    ``max_entries`` is set, that many entries per parameter are checked
    (deterministically subsampled); otherwise all entries are.
    Relative error: |a - n| / max(1, |a|, |n|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise NumericsError(f"eps {eps} outside [1e-7, 1e-3]")
    zero_grads(params)
    out = f()
    if out.size != 1:
        raise NumericsError("grad_check target must be scalar")
    if not np.isfinite(out.values).all():
        raise NumericsError("non-finite objective in grad_check")
    out.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        for name, p in params.items()
    }
    rng = np.random.default_rng(seed)
    report = {"max_rel_err": 0.0, "worst_param": None, "worst_index": None,
              "analytic": 0.0, "numeric": 0.0, "checked": 0}
    for name, p in params.items():
        flat = p.values.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            entries = rng.choice(n, size=max_entries, replace=False)
            entries.sort()
        else:
            entries = np.arange(n)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = float(f().values)
            flat[i] = orig - eps
            with no_grad():
                f_minus = float(f().values)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericsError(f"non-finite objective while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[i])
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            report["checked"] += 1
            if rel > report["max_rel_err"]:
                report.update(max_rel_err=rel, worst_param=name,
                              worst_index=int(i), analytic=a, numeric=numeric)
    report["passed"] = report["max_rel_err"] < tol
    return report
