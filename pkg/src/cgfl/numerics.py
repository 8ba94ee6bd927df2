"""Dense float64 tensors with reverse-mode differentiation.

Every trainable quantity in the package is a :class:`Tensor`. Operations
record a dynamic tape (a DAG of parent links plus backward closures) while
gradient mode is on; :func:`backward` replays it in reverse topological
order. The :func:`no_grad` context implements detached evaluation, used
wherever a value must feed a computation without receiving gradients.

All data is float64 and every op validates finiteness of its result, so a
NaN/Inf surfaces at the op that produced it rather than three modules later.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ContractViolationError(RuntimeError):
    """A caller-supplied procedure broke its stated contract."""


_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording; results inside are plain constants."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 array plus optional gradient buffer and tape links."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite (got NaN or Inf)")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A constant view of this tensor, cut off from the tape."""
        return Tensor(self.data)

    def backward(self, params: Iterable["Tensor"] = ()) -> None:
        backward(self, params)

    # -- operator sugar ----------------------------------------------------

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

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _node(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(a.data * b.data, (a, b), _bw)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(a.data / b.data, (a, b), _bw)


def neg(a) -> Tensor:
    a = _coerce(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, -g)

    return _node(-a.data, (a,), _bw)


def square(a) -> Tensor:
    a = _coerce(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), _bw)


def matmul(a, b) -> Tensor:
    """Matrix product for ndim <= 2 operands, following numpy @ semantics."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ValueError(f"matmul supports 1-D/2-D operands, got {a.ndim}-D @ {b.ndim}-D")
    out = a.data @ b.data

    def _bw(g):
        ad, bd = a.data, b.data
        if a.ndim == 2 and b.ndim == 2:
            ga, gb = g @ bd.T, ad.T @ g
        elif a.ndim == 2 and b.ndim == 1:
            ga, gb = np.outer(g, bd), ad.T @ g
        elif a.ndim == 1 and b.ndim == 2:
            ga, gb = bd @ g, np.outer(ad, g)
        else:  # 1-D @ 1-D -> scalar
            ga, gb = g * bd, g * ad
        if a.requires_grad:
            _accumulate(a, ga)
        if b.requires_grad:
            _accumulate(b, gb)

    return _node(out, (a, b), _bw)


def dot(a, b) -> Tensor:
    return matmul(a, b)


# -- reductions and shape ops -------------------------------------------------


def tsum(a, axis: int | None = None) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis)

    def _bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _node(out, (a,), _bw)


def tmean(a, axis: int | None = None) -> Tensor:
    a = _coerce(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ValueError("stack of zero tensors")
    out = np.stack([t.data for t in ts], axis=axis)

    def _bw(g):
        slices = np.moveaxis(g, axis, 0)
        for t, gs in zip(ts, slices):
            if t.requires_grad:
                _accumulate(t, np.asarray(gs))

    return _node(out, tuple(ts), _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ValueError("concat of zero tensors")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def _bw(g):
        offset = 0
        for t, size in zip(ts, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + size)
                _accumulate(t, g[tuple(idx)])
            offset += size

    return _node(out, tuple(ts), _bw)


def transpose(a) -> Tensor:
    a = _coerce(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g.T)

    return _node(a.data.T, (a,), _bw)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _coerce(a)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), _bw)


def take(a, index: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    a = _coerce(a)
    if a.ndim != 1:
        raise ValueError("take expects a 1-D tensor")

    def _bw(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[index] = g
            _accumulate(a, buf)

    return _node(a.data[index], (a,), _bw)


# -- nonlinearities ------------------------------------------------------------


def log(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g / a.data)

    return _node(out, (a,), _bw)


def exp(a) -> Tensor:
    a = _coerce(a)
    out = np.exp(a.data)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * out)

    return _node(out, (a,), _bw)


def tanh(a) -> Tensor:
    a = _coerce(a)
    out = np.tanh(a.data)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * (1.0 - out * out))

    return _node(out, (a,), _bw)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * out * (1.0 - out))

    return _node(out, (a,), _bw)


def relu(a) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), _bw)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = _coerce(a)
    mask = a.data > 0

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g * np.where(mask, 1.0, slope))

    return _node(np.where(mask, a.data, slope * a.data), (a,), _bw)


def softmax(a, axis: int = -1) -> Tensor:
    """Normalized exponentials along an axis, max-subtracted for stability."""
    a = _coerce(a)
    if a.size == 0:
        raise ValueError("softmax of an empty vector")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            _accumulate(a, out * (g - inner))

    return _node(out, (a,), _bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    if a.size == 0:
        raise ValueError("log_softmax of an empty vector")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _node(out, (a,), _bw)


# -- backward pass --------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Populate d(loss)/d(t) into t.grad for every tensor reachable from loss.

    Parameters passed in `params` that the loss does not depend on get a
    zero gradient buffer so downstream consumers never see None.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("backward expects a scalar loss tensor")
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(_topo_order(loss)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adaptive moment estimation over a fixed parameter list.

    step() consumes .grad (missing grads count as zero), applies the
    bias-corrected update, and clears the gradients.
    """

    def __init__(
        self,
        params: Iterable[Tensor] | Mapping[str, Tensor],
        lr: float = 5e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if isinstance(params, Mapping):
            params = params.values()
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        bc1 = 1.0 - self.beta1**self._t
        bc2 = 1.0 - self.beta2**self._t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        zero_grads(self.params)


# -- gradient checking --------------------------------------------------------------


@dataclass
class GradCheckRecord:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    records: list[GradCheckRecord]
    tol: float

    @property
    def max_rel_error(self) -> float:
        return max((r.rel_error for r in self.records), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self) -> GradCheckRecord | None:
        return max(self.records, key=lambda r: r.rel_error, default=None)

    def __repr__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({status}, {len(self.records)} coords, max_rel_error={self.max_rel_error:.3e})"


# Floor on the relative-error denominator: a central difference carries
# roundoff noise of order eps_machine * |loss| / eps, which would dominate a
# pure ratio at zero-gradient coordinates. The floor keeps that noise an
# order of magnitude below a 1e-4 tolerance.
def _rel_error_floor(eps: float, loss_scale: float) -> float:
    return max(1e-6, 2e-12 / eps * max(1.0, abs(loss_scale)))


def finite_difference_check(
    build_loss: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    build_loss must rebuild the loss from the current parameter values and
    be deterministic; two evaluations at the same point that disagree raise
    ContractViolationError.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    base1 = float(build_loss().data)
    base2 = float(build_loss().data)
    if base1 != base2:
        raise ContractViolationError(f"build_loss is not deterministic: {base1!r} != {base2!r}")

    zero_grads(params.values())
    loss = build_loss()
    backward(loss, params.values())
    analytic = {name: np.array(t.grad, copy=True).reshape(-1) for name, t in params.items()}
    zero_grads(params.values())

    rng = np.random.default_rng(seed)
    floor = _rel_error_floor(eps, base1)
    records: list[GradCheckRecord] = []
    for name, t in params.items():
        n = t.data.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            indices = np.sort(rng.choice(n, size=max_coords_per_param, replace=False))
        else:
            indices = np.arange(n)
        for i in indices:
            # index through unravel_index: reshape(-1) on a non-contiguous
            # array would hand back a copy and the nudge would be lost
            idx = np.unravel_index(int(i), t.data.shape)
            old = t.data[idx]
            t.data[idx] = old + eps
            f_plus = float(build_loss().data)
            t.data[idx] = old - eps
            f_minus = float(build_loss().data)
            t.data[idx] = old
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ana = float(analytic[name][i])
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), floor)
            records.append(GradCheckRecord(name, int(i), ana, numeric, rel))
    return GradCheckReport(records, tol)
