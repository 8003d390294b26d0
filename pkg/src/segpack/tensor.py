"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is closure-based: every operation returns a new ``Tensor`` whose
``_backward`` hook knows how to push gradients to its parents.  Calling
``backward()`` on a scalar walks the graph in reverse topological order and
*adds* the resulting gradients into the ``grad`` buffer of every leaf that
has ``requires_grad`` set.  Repeated backward calls therefore accumulate,
which is what the batched loss needs; ``zero_grad`` resets a buffer.

Only the operations the encoders actually use are implemented; this is not
a general computation-graph library.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ArithmeticError):
    """A value that must be finite is NaN or infinite."""


class Tensor:
    """A dense float64 array, optionally a node in an autodiff graph.

    ``data`` is always C-contiguous, so ``values`` (the flat row-major
    view) and ``shape`` describe it completely.  ``grad``, once allocated,
    has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array, dict], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> Array:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def is_leaf(self) -> bool:
        return self._backward is None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires-grad leaf.

        ``self`` must be a scalar.  Intermediate gradients are kept in a
        per-call table, so stale state from earlier calls never leaks into
        the propagation; only leaf ``grad`` buffers persist (and add up).
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order = self._topo_order()
        table: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = table.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is not None:
                node._backward(g, table)

    def _topo_order(self) -> list["Tensor"]:
        # Iterative DFS post-order, reversed: children before parents.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        order.reverse()
        return order

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def accumulate(table: dict, node: Tensor, g: Array) -> None:
    """Add a gradient contribution for ``node`` into a backward table."""
    if not node.requires_grad:
        return
    key = id(node)
    if key in table:
        table[key] = table[key] + g
    else:
        table[key] = g


def from_op(data: Array, parents: Sequence[Tensor], backward: Callable[[Array, dict], None]) -> Tensor:
    """Build an op node; the graph edge is dropped if no parent needs grad."""
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# core operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with gradient support."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, g @ b.data.T)
        accumulate(table, b, a.data.T @ g)

    return from_op(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got shape {a.shape}")

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, np.ascontiguousarray(g.T))

    return from_op(np.ascontiguousarray(a.data.T), (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.shape

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, g.reshape(orig))

    return from_op(a.data.reshape(shape), (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; broadcasting is allowed (used for bias terms)."""

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, _unbroadcast(g, a.shape))
        accumulate(table, b, _unbroadcast(g, b.shape))

    return from_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, _unbroadcast(g, a.shape))
        accumulate(table, b, _unbroadcast(-g, b.shape))

    return from_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, _unbroadcast(g * b.data, a.shape))
        accumulate(table, b, _unbroadcast(g * a.data, b.shape))

    return from_op(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, g * c)

    return from_op(a.data * c, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, g * (1.0 - out * out))

    return from_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, g * out * (1.0 - out))

    return from_op(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0  # subgradient 0 at the kink

    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, g * mask)

    return from_op(np.maximum(a.data, 0.0), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g: Array, table: dict) -> None:
        accumulate(table, a, np.full(a.shape, float(g.reshape(-1)[0])))

    return from_op(np.asarray(a.data.sum()).reshape(()), (a,), backward)


_POINTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid}
_POINTWISE_BINARY = {"add": add, "mul": mul, "sub": sub}


def pointwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name.

    Binary operations require identical shapes here (the internal helpers
    broadcast, this public entry point does not).  ``scale`` takes a tensor
    and a plain float.
    """
    if op in _POINTWISE_UNARY:
        (a,) = args
        return _POINTWISE_UNARY[op](a)
    if op in _POINTWISE_BINARY:
        a, b = args
        if a.shape != b.shape:
            raise ShapeError(f"pointwise {op} shape mismatch: {a.shape} vs {b.shape}")
        return _POINTWISE_BINARY[op](a, b)
    if op == "scale":
        a, c = args
        return scale(a, c)
    raise ValueError(f"unknown pointwise op {op!r}")


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where mask == 1.

    Masked positions come out exactly 0; the unmasked ones sum to 1 per
    row.  Raises if any row has no unmasked position.
    """
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if m.shape != scores.shape:
        raise ShapeError(f"masked_softmax shape mismatch: {scores.shape} vs {m.shape}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("masked_softmax mask must be binary")
    if np.any(m.sum(axis=-1) == 0.0):
        raise ValueError("empty attention support")

    shifted = np.where(m == 1.0, scores.data, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted) * m
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array, table: dict) -> None:
        dot = (g * out).sum(axis=-1, keepdims=True)
        accumulate(table, scores, out * (g - dot))

    return from_op(out, (scores,), backward)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm."""
    norms = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norms < 1e-12):
        raise ValueError("zero-norm embedding")
    out = a.data / norms

    def backward(g: Array, table: dict) -> None:
        dot = (g * out).sum(axis=axis, keepdims=True)
        accumulate(table, a, (g - out * dot) / norms)

    return from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    Returns the maximum over all parameter entries of
    ``|analytic - numeric| / max(1, |numeric|)``.  ``f`` is re-evaluated
    twice per entry with the entry nudged by ``eps``.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")

    def evaluate() -> float:
        out = f()
        if out.data.size != 1:
            raise ShapeError(f"grad_check target must be scalar, got shape {out.shape}")
        val = float(out.data.reshape(-1)[0])
        if not np.isfinite(val):
            raise NonFiniteError("grad_check target is not finite")
        return val

    for p in params:
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ShapeError(f"grad_check target must be scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check target is not finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = evaluate()
            flat[i] = orig - eps
            lo = evaluate()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()
