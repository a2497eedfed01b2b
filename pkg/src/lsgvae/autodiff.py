"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Only the operations the forecasting model needs are provided.  Each operation
returns a new :class:`Tensor` that remembers its parents and a closure mapping
the upstream gradient to one gradient per parent.  Binary operations follow
numpy broadcasting; the backward pass sums gradients back to operand shapes.

Example
-------
>>> p = Tensor([1.0, 2.0], requires_grad=True)
>>> loss = reduce("sum", p * p)
>>> backward(loss)[p]
array([2., 4.])
"""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """An immutable float64 array plus the graph edges that produced it."""

    __slots__ = ("data", "requires_grad", "parents", "op", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 *, parents: tuple["Tensor", ...] = (), op: str = "leaf",
                 backward_fn: BackwardFn | None = None, _copy: bool = True):
        if _copy or not isinstance(data, np.ndarray) or data.dtype != np.float64:
            arr = np.array(data, dtype=np.float64)
        else:
            arr = data
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"non-finite value produced by '{op}'")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{tag})"

    __hash__ = object.__hash__

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str,
          backward_fn: BackwardFn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents=parents, op=op, backward_fn=backward_fn,
                      _copy=False)
    return Tensor(data, op=op, _copy=False)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    stretched = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if stretched:
        grad = grad.sum(axis=stretched, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _node(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _node(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _node(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    if np.any(b.data <= 0):
        raise DomainError("div requires a strictly positive denominator")
    out = a.data / b.data
    return _node(out, (a, b), "div",
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _node(out, (x,), "exp", lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    return _node(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * x.data, (x,), "square", lambda g: (2.0 * g * x.data,))


def softplus(x) -> Tensor:
    """log(1 + exp(x)) in the overflow-safe form max(x, 0) + log1p(exp(-|x|))."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(out, (x,), "softplus", lambda g: (g * sig,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


_UNARY = {"exp": exp, "log": log, "square": square, "softplus": softplus, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two operands")
        return _BINARY[op](*args)
    raise ContractError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; ``a`` may carry leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        k, n = b.shape

        def backward_fn(g):
            da = g @ b.data.T
            db = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return da, db
    else:
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError as exc:
            raise DimensionError(f"matmul batch axes differ: {a.shape} @ {b.shape}") from exc

        def backward_fn(g):
            da = g @ np.swapaxes(b.data, -1, -2)
            db = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _node(a.data @ b.data, (a, b), "matmul", backward_fn)


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise DimensionError(f"repeated axis in {axes}")
    return tuple(sorted(out))


def reduce(op: str, x, axes=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None; an empty list is the identity)."""
    x = as_tensor(x)
    if op not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {op!r}")
    ax = _normalize_axes(axes, x.ndim)
    if not ax:
        return x
    count = int(np.prod([x.shape[i] for i in ax]))
    out = x.data.sum(axis=ax, keepdims=keepdims)
    scale = 1.0
    if op == "mean":
        scale = 1.0 / count
        out = out * scale
    kept_shape = tuple(1 if i in ax else n for i, n in enumerate(x.shape))

    def backward_fn(g):
        return (np.broadcast_to(g.reshape(kept_shape) * scale, x.shape),)

    return _node(out, (x,), op, backward_fn)


def sum(x, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return reduce("sum", x, axes, keepdims)


def mean(x, axes=None, keepdims: bool = False) -> Tensor:
    return reduce("mean", x, axes, keepdims)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}") from exc
    return _node(out, (x,), "reshape", lambda g: (g.reshape(x.shape),))


def flatten(x, start: int = 0) -> Tensor:
    """Collapse every axis from ``start`` onwards into one."""
    x = as_tensor(x)
    return reshape(x, x.shape[:start] + (-1,))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _node(np.swapaxes(x.data, a, b), (x,), "swapaxes",
                 lambda g: (np.swapaxes(g, a, b),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}") from exc
    return _node(np.ascontiguousarray(out), (x,), "broadcast_to", lambda g: (_unbroadcast(g, x.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), "concat", backward_fn)


def split(x, sections: int, axis: int = -1) -> tuple[Tensor, ...]:
    """Split into ``sections`` equal parts along ``axis``."""
    x = as_tensor(x)
    n = x.shape[axis]
    if sections < 1 or n % sections:
        raise DimensionError(f"axis of length {n} does not split into {sections} parts")
    width = n // sections
    ax = axis % x.ndim
    parts = []
    for i in range(sections):
        index = (slice(None),) * ax + (slice(i * width, (i + 1) * width),)
        parts.append(getitem(x, index))
    return tuple(parts)


def getitem(x, index) -> Tensor:
    """Basic (slice/int) indexing; the result never aliases repeated entries."""
    x = as_tensor(x)
    items = index if isinstance(index, tuple) else (index,)
    if not all(isinstance(i, (slice, int)) or i is Ellipsis for i in items):
        raise ContractError("only basic slice/int indexing is differentiable")
    out = x.data[index]

    def backward_fn(g):
        full = np.zeros(x.shape)
        full[index] = g
        return (full,)

    return _node(out, (x,), "getitem", backward_fn)


def reshape_concat_split(x, spec: str, *args):
    """Name-dispatched front end for the shape operations."""
    if spec == "reshape":
        return reshape(x, args[0])
    if spec == "flatten":
        return flatten(x, *args)
    if spec == "concat":
        return concat(x, *args)
    if spec == "split":
        return split(x, *args)
    raise ContractError(f"unknown shape op {spec!r}")


# ---------------------------------------------------------------------------
# reverse pass


class GradientTape:
    """Topologically ordered record of the nodes reachable from a root.

    ``nodes`` lists every node after all of its parents, so iterating it in
    reverse visits each node after all of its consumers.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._order(root)

    @staticmethod
    def _order(root: Tensor) -> list[Tensor]:
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
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def replay(self, seed: np.ndarray) -> dict[int, np.ndarray]:
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)
        return grads


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every reachable leaf.

    Intermediate gradients are discarded; only leaves created with
    ``requires_grad=True`` appear in the result.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = GradientTape(loss)
    grads = tape.replay(np.ones(loss.shape))
    out = {}
    for node in tape.nodes:
        if not node.parents and id(node) in grads:
            g = grads[id(node)]
            out[node] = np.array(np.broadcast_to(g, node.shape))
    return out


def grad(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients keyed by parameter name; unreached parameters get zeros."""
    by_node = backward(loss)
    return {k: by_node.get(p, np.zeros(p.shape)) for k, p in params.items()}


def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                   step: float = 1e-5, indices: Iterable[int] | None = None) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (flat indices optional)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return out.reshape(x.shape)
