"""Dense tensors with reverse-mode automatic differentiation.

Every value that takes part in training is a :class:`Tensor` wrapping a numpy
array. Operations build a graph of parent links and local backward closures;
:func:`backward` walks that graph in reverse topological order.

Shapes are never broadcast implicitly. Two tensors combined elementwise must
have the same shape, or one of them must be a scalar. Row-wise bias addition
and masking have their own explicit ops (:func:`add_bias`, :func:`scale`).
"""
from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractViolation(RuntimeError):
    """Raised when a function handed to :func:`gradcheck` is not deterministic."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self.shape)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


class Parameter(Tensor):
    """A trainable leaf tensor. Its ``grad`` is filled by :func:`backward`."""

    __slots__ = ()

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


def _raise_not_scalar(shape):
    raise ValueError(f"tensor of shape {shape} is not a scalar")


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of an operation over ``parents``.

    ``backward_fn`` receives the gradient of the output and returns one
    gradient (or ``None``) per parent, each shaped like that parent.
    """
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(grad: np.ndarray, t: Tensor) -> np.ndarray:
    if _is_scalar(t) and grad.ndim:
        return np.asarray(grad.sum(), dtype=grad.dtype)
    return grad


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_same(a, b, "add")

    def bw(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return make_op(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_same(a, b, "sub")

    def bw(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return make_op(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_same(a, b, "mul")

    def bw(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return make_op(a.data * b.data, (a, b), bw)


def elementwise(op: str, a, b) -> Tensor:
    """Dispatch ``op`` in {"add", "mul", "sub"}."""
    fns = {"add": add, "mul": mul, "sub": sub}
    if op not in fns:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fns[op](a, b)


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, factor: np.ndarray) -> Tensor:
    """Multiply by a constant array that broadcasts onto ``a`` (masks, weights).

    The factor is not differentiated. Its broadcast result must keep ``a``'s shape.
    """
    factor = np.asarray(factor, dtype=a.dtype)
    if np.broadcast_shapes(factor.shape, a.shape) != a.shape:
        raise DimensionError(f"scale: factor shape {factor.shape} does not broadcast onto {a.shape}")
    return make_op(a.data * factor, (a,), lambda g: (g * factor,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector ``b`` of shape (F,) to every row of ``x`` of shape (..., F)."""
    if b.data.ndim != 1 or x.shape[-1:] != b.shape:
        raise DimensionError(f"add_bias: bias {b.shape} does not match trailing dim of {x.shape}")
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        return g, g.sum(axis=lead)

    return make_op(x.data + b.data, (x, b), bw)


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched product of 3-D operands."""
    if a.data.ndim == 2 and b.data.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: inner dimensions of {a.shape} and {b.shape} disagree")

        def bw(g):
            return g @ b.data.T, a.data.T @ g

        return make_op(a.data @ b.data, (a, b), bw)
    if a.data.ndim == 3 and b.data.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise DimensionError(f"matmul: batched shapes {a.shape} and {b.shape} disagree")

        def bw3(g):
            return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

        return make_op(a.data @ b.data, (a, b), bw3)
    raise DimensionError(f"matmul: unsupported operand ranks {a.shape} and {b.shape}")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)
    return make_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; the backward pass slices the gradient back."""
    if not parts:
        raise ValueError("concat: empty part list")
    if len(parts) == 1:
        return parts[0]
    arrays = [p.data for p in parts]
    sizes = [a.shape[axis] for a in arrays]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[a.shape for a in arrays]}") from exc
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return np.split(g, bounds, axis=axis)

    return make_op(out, parts, bw)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("stack: empty part list")
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    n = len(parts)

    def bw(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return make_op(np.stack([p.data for p in parts], axis=axis), parts, bw)


class SliceGrad:
    """Gradient that is zero except at ``idx``; accumulated in place by :func:`backward`."""

    __slots__ = ("idx", "values", "basic")

    def __init__(self, idx, values: np.ndarray):
        self.idx = idx
        self.values = values
        parts = idx if isinstance(idx, tuple) else (idx,)
        self.basic = all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)

    def add_into(self, buf: np.ndarray) -> None:
        if self.basic:
            buf[self.idx] += self.values
        else:
            np.add.at(buf, self.idx, self.values)

    def dense(self, like: np.ndarray) -> np.ndarray:
        buf = np.zeros_like(like)
        self.add_into(buf)
        return buf


def index(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    out = a.data[idx]
    return make_op(np.array(out, copy=True), (a,), lambda g: (SliceGrad(idx, g),))


def scatter_rows(rows: Tensor, positions: np.ndarray, n_rows: int) -> Tensor:
    """Place ``rows`` (N, F) at ``positions`` of a zero (n_rows, F) matrix."""
    out = np.zeros((n_rows,) + rows.shape[1:], dtype=rows.dtype)
    out[positions] = rows.data
    return make_op(out, (rows,), lambda g: (g[positions],))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_op(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), np.asarray(1.0 / count))


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    keep = a.data >= lo
    return make_op(np.where(keep, a.data, lo).astype(a.dtype), (a,), lambda g: (g * keep,))


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-shifted softmax along ``axis``.

    ``mask`` (broadcastable, truthy = keep) forces excluded entries to weight 0.
    """
    x = a.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(keep, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return make_op(out, (a,), bw)


class DegenerateNormalization(ArithmeticError):
    """Raised when a literal normalization divides by a near-zero total."""


def normalize(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None, min_abs: float = 1e-8) -> Tensor:
    """Divide entries by their (masked) sum along ``axis``, without exponentiation."""
    x = a.data
    keep = np.ones_like(x) if mask is None else np.broadcast_to(np.asarray(mask, dtype=x.dtype), x.shape)
    xm = x * keep
    total = xm.sum(axis=axis, keepdims=True)
    if np.any(np.abs(total) < min_abs):
        raise DegenerateNormalization(f"normalizer magnitude below {min_abs}")
    out = xm / total

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (keep * (g - dot) / total,)

    return make_op(out, (a,), bw)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> None:
    """Fill ``.grad`` of every leaf reachable from the scalar ``loss``.

    Leaves listed in ``params`` but unreachable from the loss get zero gradients.
    Gradients are overwritten, not accumulated across calls.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else []
    for p in params:
        p.grad = np.zeros_like(p.data)
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if isinstance(pg, SliceGrad):
                if key not in grads:
                    grads[key] = np.zeros_like(parent.data)
                    owned.add(key)
                elif key not in owned:
                    grads[key] = grads[key].copy()
                    owned.add(key)
                pg.add_into(grads[key])
            elif key in grads:
                grads[key] = grads[key] + pg
                owned.add(key)
            else:
                grads[key] = np.asarray(pg, dtype=parent.dtype)
                owned.discard(key)


# ---------------------------------------------------------------------------
# finite-difference oracle


def _rng_snapshot(rngs: Sequence[np.random.Generator]):
    _, keys, pos, *_ = np.random.get_state()
    return [(keys.tobytes(), pos)] + [repr(r.bit_generator.state) for r in rngs]


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    seed: int = 0,
    rngs: Sequence[np.random.Generator] = (),
) -> float:
    """Max relative error between backward gradients and central differences.

    ``f`` maps ``inputs`` to a tensor; it is reduced to a scalar by a fixed
    random projection. The error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    Raises :class:`ContractViolation` if ``f`` consumes randomness from the
    global numpy generator or any of ``rngs``, or is not repeatable.
    """
    inputs = list(inputs)
    for t in inputs:
        if not t.requires_grad:
            t.requires_grad = True
    probe = f(*inputs)
    weights = np.random.default_rng(seed).standard_normal(probe.shape).astype(probe.dtype)

    def objective() -> Tensor:
        return sum(scale(f(*inputs), weights))

    before = _rng_snapshot(rngs)
    base = objective()
    backward(base, inputs)
    analytic = [t.grad.copy() for t in inputs]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(*inputs).data.copy()
            flat[i] = orig - step
            down = f(*inputs).data.copy()
            flat[i] = orig
            # difference outputs before projecting: unaffected entries cancel exactly
            numeric = float(((up - down) * weights).sum()) / (2.0 * step)
            a = float(gflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    again = float(objective().data)
    if _rng_snapshot(rngs) != before:
        raise ContractViolation("function under gradcheck consumed random numbers")
    if again != float(base.data):
        raise ContractViolation("function under gradcheck is not deterministic")
    return worst
