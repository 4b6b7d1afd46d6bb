"""Minimal reverse-mode autodiff over dense float64 arrays.

Define-by-run: operations executed inside a ``Tape`` context are recorded in
execution order; ``Tape.backward`` replays them exactly once in reverse,
accumulating gradients into ``Tensor.grad`` buffers. The tape is meant to be
rebuilt every training iteration, so no graph caching or retention logic
exists. Everything is float64; there is no broadcasting magic beyond what
numpy does, and every backward rule folds broadcast axes back with
``_unbroadcast``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "elementwise",
    "stop_gradient",
    "straight_through",
    "matmul",
    "concat",
    "stack",
    "exclusive_cumprod",
    "sigmoid",
    "tanh",
    "relu",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "clip",
]

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """Dense float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def tensor(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class Tape:
    """Ordered record of differentiable operations.

    Recording order equals forward execution order; ``backward`` walks the
    list once in reverse. Tapes nest (the innermost active tape records), but
    tensors must not be shared across concurrently running tapes.
    """

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and accumulate grads along the tape in reverse."""
        if loss.values.size != 1:
            raise ValueError(
                f"backward expects a scalar loss, got shape {loss.values.shape}"
            )
        loss.grad = np.ones_like(loss.values)
        for out, backward_fn in reversed(self._entries):
            if out.grad is None:
                continue
            backward_fn(out.grad)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._entries.append((out, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    grad = _unbroadcast(grad, t.values.shape)
    if t.grad is None:
        t.grad = grad.astype(np.float64, copy=True).reshape(t.values.shape)
    else:
        t.grad += grad.reshape(t.values.shape)


# -- binary elementwise ops --------------------------------------------------


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.values.shape, b.values.shape)
    except ValueError as err:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}") from err


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.values + b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _record(out, backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.values - b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _record(out, backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.values * b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, g * b.values)
        _accumulate(b, g * a.values)

    return _record(out, backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.values / b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, g / b.values)
        _accumulate(b, -g * out.values / b.values)

    return _record(out, backward)


# -- unary elementwise ops ---------------------------------------------------


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.values, a.requires_grad)

    def backward(g):
        _accumulate(a, -g)

    return _record(out, backward)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.values), a.requires_grad)

    def backward(g):
        _accumulate(a, g * out.values)

    return _record(out, backward)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.values), a.requires_grad)

    def backward(g):
        _accumulate(a, g / a.values)

    return _record(out, backward)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sqrt(a.values), a.requires_grad)

    def backward(g):
        _accumulate(a, g * 0.5 / out.values)

    return _record(out, backward)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(_sigmoid_values(a.values), a.requires_grad)

    def backward(g):
        _accumulate(a, g * out.values * (1.0 - out.values))

    return _record(out, backward)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.values), a.requires_grad)

    def backward(g):
        _accumulate(a, g * (1.0 - out.values * out.values))

    return _record(out, backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.values, 0.0), a.requires_grad)

    def backward(g):
        _accumulate(a, g * (a.values > 0.0))

    return _record(out, backward)


def absolute(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.abs(a.values), a.requires_grad)

    def backward(g):
        _accumulate(a, g * np.sign(a.values))

    return _record(out, backward)


def power(a: Tensor, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)
    out = Tensor(a.values**p, a.requires_grad)

    def backward(g):
        _accumulate(a, g * p * a.values ** (p - 1.0))

    return _record(out, backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only strictly inside the range."""
    a = _as_tensor(a)
    out = Tensor(np.clip(a.values, lo, hi), a.requires_grad)

    def backward(g):
        _accumulate(a, g * ((a.values > lo) & (a.values < hi)))

    return _record(out, backward)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {
    "exp": exp,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "log": log,
    "sqrt": sqrt,
    "abs": absolute,
    "neg": neg,
}


def elementwise(op_kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch an elementwise op by name (add/sub/mul/div need two operands)."""
    if op_kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise {op_kind!r} needs two operands")
        return _ELEMENTWISE_BINARY[op_kind](a, b)
    if op_kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"elementwise {op_kind!r} takes one operand")
        return _ELEMENTWISE_UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# -- gradient control --------------------------------------------------------


def stop_gradient(a: Tensor) -> Tensor:
    """Forward identity, zero gradient through this edge."""
    a = _as_tensor(a)
    return Tensor(a.values.copy(), requires_grad=False)


def straight_through(hard_values: np.ndarray, soft: Tensor) -> Tensor:
    """Forward the given hard values; route the gradient to ``soft`` unchanged.

    Equivalent to ``stop_gradient(hard - soft) + soft`` without the float
    round-off that the literal subtraction would introduce in the forward
    values.
    """
    soft = _as_tensor(soft)
    hard = np.asarray(hard_values, dtype=np.float64)
    if hard.shape != soft.values.shape:
        raise ValueError(
            f"straight_through: shape mismatch {hard.shape} vs {soft.values.shape}"
        )
    out = Tensor(hard.copy(), soft.requires_grad)

    def backward(g):
        _accumulate(soft, g)

    return _record(out, backward)


# -- linear algebra / structure ----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimension mismatch {a.shape} @ {b.shape}")
    out = Tensor(a.values @ b.values, a.requires_grad or b.requires_grad)

    def backward(g):
        _accumulate(a, g @ b.values.T)
        _accumulate(b, a.values.T @ g)

    return _record(out, backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims), a.requires_grad)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.values.shape))

    return _record(out, backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.mean(axis=axis, keepdims=keepdims), a.requires_grad)
    count = a.values.size / out.values.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.values.shape) / count)

    return _record(out, backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.reshape(shape), a.requires_grad)

    def backward(g):
        _accumulate(a, g.reshape(a.values.shape))

    return _record(out, backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.values.transpose(axes), a.requires_grad)
    if axes is None:
        inverse = None
    else:
        inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _record(out, backward)


def take(a: Tensor, key) -> Tensor:
    """Numpy-style indexing (slices, ints, integer arrays); backward scatter-adds."""
    a = _as_tensor(a)
    out = Tensor(a.values[key], a.requires_grad)

    def backward(g):
        if not a.requires_grad:
            return
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        _accumulate(a, full)

    return _record(out, backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.values for t in tensors], axis=axis),
        any(t.requires_grad for t in tensors),
    )
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(t, g[tuple(index)])

    return _record(out, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(
        np.stack([t.values for t in tensors], axis=axis),
        any(t.requires_grad for t in tensors),
    )

    def backward(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _record(out, backward)


def exclusive_cumprod(a: Tensor, axis: int = 0) -> Tensor:
    """out[i] = prod(a[:i]) along ``axis`` (out[0] = 1).

    The backward rule divides by the inputs, so entries must be nonzero
    wherever a gradient is needed (true for transmittance factors, which are
    bounded away from zero by the alpha clamp).
    """
    a = _as_tensor(a)
    inclusive = np.cumprod(a.values, axis=axis)
    shifted = np.roll(inclusive, 1, axis=axis)
    index = [slice(None)] * a.ndim
    index[axis] = 0
    shifted[tuple(index)] = 1.0
    out = Tensor(shifted, a.requires_grad)

    def backward(g):
        # d/da_j = sum_{i > j} g_i * out_i / a_j
        weighted = g * out.values
        flipped = np.flip(weighted, axis=axis)
        suffix = np.flip(np.cumsum(flipped, axis=axis), axis=axis)
        suffix = np.roll(suffix, -1, axis=axis)
        idx_last = [slice(None)] * a.ndim
        idx_last[axis] = -1
        suffix[tuple(idx_last)] = 0.0
        _accumulate(a, suffix / a.values)

    return _record(out, backward)
