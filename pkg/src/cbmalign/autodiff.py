"""Dense-tensor reverse-mode differentiation engine.

Tensors wrap float64 numpy arrays and record the operations that produced
them; ``backward`` on a scalar walks the graph once in reverse topological
order and accumulates gradients into ``.grad``. The op set is exactly what a
concept-bottleneck forward pass and its losses need: matmul, batch-broadcast
add/sub/mul, relu, abs, log, clamp, softmax over the last axis, segment
concat/extract/zero-mask, scalar scale and shift, and sum/mean reductions.

Every op validates that its result is finite; NaN or Inf raises
``NumericError`` naming the offending op. Broadcasting is limited to a
trailing-shape operand against a leading batch dimension.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError

Array = np.ndarray


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A float64 array plus the backward rule of the op that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op", "_consumed")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("non-finite values in tensor created by op 'leaf'")
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], None] | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data: Array, op: str, parents: tuple["Tensor", ...],
                backward_fn: Callable[[Array], None]) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by op '{op}'")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._op = op
        out._consumed = False
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    def _accumulate(self, contribution: Array) -> None:
        if self.grad is None:
            self.grad = np.array(contribution, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + contribution

    def backward(self) -> None:
        """Run the reverse pass from this scalar, filling ``.grad`` fields.

        Each non-leaf node is visited exactly once. Calling backward twice on
        the same result tensor is an error; build a fresh graph instead.
        """
        if self.data.shape != ():
            raise UsageError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._consumed:
            raise UsageError("backward already called on this graph; rebuild the loss first")
        self._consumed = True

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, children_done = stack.pop()
            if children_done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- binary ops with batch broadcasting ---------------------------------

    @staticmethod
    def _broadcast_check(a: "Tensor", b: "Tensor", op: str) -> None:
        if a.shape == b.shape:
            return
        # only a trailing-shape operand broadcasting over a leading batch dim
        if a.ndim == b.ndim + 1 and a.shape[1:] == b.shape:
            return
        if b.ndim == a.ndim + 1 and b.shape[1:] == a.shape:
            return
        raise ConfigError(f"shape mismatch for op '{op}': {a.shape} vs {b.shape}")

    @staticmethod
    def _reduce_to(grad: Array, shape: tuple[int, ...]) -> Array:
        if grad.shape == shape:
            return grad
        return grad.sum(axis=0)

    def __add__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self.shift(float(other))
        Tensor._broadcast_check(self, other, "add")
        a, b = self, other

        def backward_fn(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(Tensor._reduce_to(g, a.shape))
            if b.requires_grad:
                b._accumulate(Tensor._reduce_to(g, b.shape))

        return Tensor._result(a.data + b.data, "add", (a, b), backward_fn)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self.shift(-float(other))
        Tensor._broadcast_check(self, other, "sub")
        a, b = self, other

        def backward_fn(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(Tensor._reduce_to(g, a.shape))
            if b.requires_grad:
                b._accumulate(Tensor._reduce_to(-g, b.shape))

        return Tensor._result(a.data - b.data, "sub", (a, b), backward_fn)

    def __rsub__(self, other) -> "Tensor":
        # scalar - tensor
        return self.scale(-1.0).shift(float(other))

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        Tensor._broadcast_check(self, other, "mul")
        a, b = self, other

        def backward_fn(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(Tensor._reduce_to(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(Tensor._reduce_to(g * a.data, b.shape))

        return Tensor._result(a.data * b.data, "mul", (a, b), backward_fn)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self.scale(-1.0)

    def __matmul__(self, other) -> "Tensor":
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ConfigError(f"shape mismatch for op 'matmul': {a.shape} @ {b.shape}")

        def backward_fn(g: Array) -> None:
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._result(a.data @ b.data, "matmul", (a, b), backward_fn)

    # -- unary ops -----------------------------------------------------------

    def scale(self, factor: float) -> "Tensor":
        src = self

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g * factor)

        return Tensor._result(src.data * factor, "scale", (src,), backward_fn)

    def shift(self, offset: float) -> "Tensor":
        src = self

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g)

        return Tensor._result(src.data + offset, "shift", (src,), backward_fn)

    @property
    def T(self) -> "Tensor":
        if self.ndim != 2:
            raise ConfigError(f"transpose requires a 2-d tensor, got shape {self.shape}")
        src = self

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g.T)

        return Tensor._result(np.ascontiguousarray(self.data.T), "transpose", (src,), backward_fn)

    def relu(self) -> "Tensor":
        src = self
        mask = src.data > 0.0  # subgradient at 0 is 0

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g * mask)

        return Tensor._result(np.maximum(src.data, 0.0), "relu", (src,), backward_fn)

    def __abs__(self) -> "Tensor":
        src = self
        sign = np.sign(src.data)  # sign(0) == 0: subgradient of |z| at 0 is 0

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g * sign)

        return Tensor._result(np.abs(src.data), "abs", (src,), backward_fn)

    def log(self) -> "Tensor":
        src = self

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g / src.data)

        return Tensor._result(np.log(src.data), "log", (src,), backward_fn)

    def clamp_min(self, floor: float) -> "Tensor":
        src = self
        mask = src.data > floor  # no gradient through clamped entries

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(g * mask)

        return Tensor._result(np.maximum(src.data, floor), "clamp_min", (src,), backward_fn)

    def softmax(self) -> "Tensor":
        """Softmax over the last axis, computed with max-subtraction."""
        src = self
        shifted = src.data - src.data.max(axis=-1, keepdims=True)
        exp = np.exp(shifted)
        out = exp / exp.sum(axis=-1, keepdims=True)

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                inner = (g * out).sum(axis=-1, keepdims=True)
                src._accumulate(out * (g - inner))

        return Tensor._result(out, "softmax", (src,), backward_fn)

    # -- segment ops over the last axis --------------------------------------

    def _segment_check(self, start: int, stop: int, op: str) -> None:
        width = self.shape[-1]
        if not (0 <= start < stop <= width):
            raise UsageError(f"segment [{start}:{stop}) out of range for op '{op}' on width {width}")

    def slice_segment(self, start: int, stop: int) -> "Tensor":
        self._segment_check(start, stop, "slice_segment")
        src = self

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                full = np.zeros_like(src.data)
                full[..., start:stop] = g
                src._accumulate(full)

        return Tensor._result(np.ascontiguousarray(self.data[..., start:stop]),
                              "slice_segment", (src,), backward_fn)

    def zero_segment(self, start: int, stop: int) -> "Tensor":
        """Replace columns [start, stop) with zeros; gradient flows elsewhere."""
        self._segment_check(start, stop, "zero_segment")
        src = self
        out = src.data.copy()
        out[..., start:stop] = 0.0

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                masked = g.copy()
                masked[..., start:stop] = 0.0
                src._accumulate(masked)

        return Tensor._result(out, "zero_segment", (src,), backward_fn)

    # -- reductions ----------------------------------------------------------

    def sum(self) -> "Tensor":
        src = self

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(np.full(src.shape, float(g)))

        return Tensor._result(np.asarray(src.data.sum()), "sum", (src,), backward_fn)

    def mean(self) -> "Tensor":
        src = self
        n = src.data.size

        def backward_fn(g: Array) -> None:
            if src.requires_grad:
                src._accumulate(np.full(src.shape, float(g) / n))

        return Tensor._result(np.asarray(src.data.mean()), "mean", (src,), backward_fn)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate segments along the last axis."""
    if not tensors:
        raise ConfigError("concat requires at least one tensor")
    lead = tensors[0].shape[:-1]
    for t in tensors:
        if t.shape[:-1] != lead:
            raise ConfigError(f"shape mismatch for op 'concat': {[t.shape for t in tensors]}")
    widths = [t.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)
    parents = tuple(tensors)

    def backward_fn(g: Array) -> None:
        for t, start, stop in zip(parents, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[..., start:stop])

    data = np.concatenate([t.data for t in tensors], axis=-1)
    return Tensor._result(data, "concat", parents, backward_fn)


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[Array]:
    """Backward from ``loss`` and return per-parameter gradients.

    Parameters that do not influence the loss get exact zeros.
    """
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
