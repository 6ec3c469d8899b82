"""Reverse-mode differentiable primitives over small dense float64 arrays.

Everything downstream (encoder, model, training) is built from the handful
of operations in this module.  The graph is define-by-run: each operation
returns a :class:`Node` holding the forward value, the parent nodes, and a
closure that maps the upstream gradient onto the parents.  Graphs are
rebuilt for every example or batch; parameter leaves persist across steps
and accumulate gradients until ``zero_grad``.

All forward/backward arithmetic runs at double precision.  A node's value
must stay finite through any pass; operations raise
:class:`NumericInstabilityError` otherwise.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class EmptySequenceError(ValueError):
    """An operation over a sequence received no elements."""


class LabelError(IndexError):
    """A class index lies outside the valid range."""


class NumericInstabilityError(ArithmeticError):
    """A forward or backward value became NaN or infinite."""


def _check_finite(arr: Array, op: str) -> Array:
    if not np.all(np.isfinite(arr)):
        raise NumericInstabilityError(f"{op} produced a non-finite value")
    return arr


class Node:
    """One value in the computation graph.

    ``value`` is a float64 array, ``parents`` the nodes it was computed
    from, and ``op`` names the backward rule that produced it ("leaf" for
    inputs and parameters).  Gradients accumulate into ``grad`` during
    :func:`backward`; a leaf's ``grad`` always matches its value's shape.
    """

    __slots__ = ("value", "grad", "parents", "op", "_backward")

    def __init__(self, value, parents=(), op="leaf", backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents: tuple[Node, ...] = tuple(parents)
        self.op = op
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def leaf(value) -> Node:
    """Wrap an array as a graph input/parameter."""
    return Node(value)


def linear(x: Node, W: Node, b: Node) -> Node:
    """Affine map ``W @ x + b`` for a vector ``x``."""
    if W.value.ndim != 2 or x.value.ndim != 1 or b.value.ndim != 1:
        raise DimensionError(
            f"linear expects W matrix, x/b vectors; got W{W.shape} x{x.shape} b{b.shape}"
        )
    m, n = W.value.shape
    if x.value.shape[0] != n or b.value.shape[0] != m:
        raise DimensionError(
            f"linear: W{W.shape} does not conform with x{x.shape} and b{b.shape}"
        )
    out = Node(_check_finite(W.value @ x.value + b.value, "linear"), (x, W, b), "linear")

    def _bw(g: Array) -> None:
        x.accumulate(W.value.T @ g)
        W.accumulate(np.outer(g, x.value))
        b.accumulate(g)

    out._backward = _bw
    return out


def relu(x: Node) -> Node:
    """Elementwise max(x, 0); the subgradient at exactly 0 is 0."""
    mask = x.value > 0.0
    out = Node(np.where(mask, x.value, 0.0), (x,), "relu")

    def _bw(g: Array) -> None:
        x.accumulate(np.where(mask, g, 0.0))

    out._backward = _bw
    return out


def layer_norm(x: Node, gamma: Node, beta: Node, eps: float = 1e-5) -> Node:
    """Normalize a vector to zero mean / unit population variance, then scale and shift."""
    if eps <= 0.0:
        raise ValueError("layer_norm: eps must be positive")
    if x.value.ndim != 1 or x.value.shape != gamma.value.shape != beta.value.shape:
        raise DimensionError(
            f"layer_norm: x{x.shape}, gamma{gamma.shape}, beta{beta.shape} must be equal-length vectors"
        )
    n = x.value.shape[0]
    mu = x.value.mean()
    var = np.mean((x.value - mu) ** 2)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = Node(_check_finite(gamma.value * xhat + beta.value, "layer_norm"), (x, gamma, beta), "layer_norm")

    def _bw(g: Array) -> None:
        beta.accumulate(g)
        gamma.accumulate(g * xhat)
        q = g * gamma.value
        x.accumulate(inv / n * (n * q - q.sum() - xhat * np.dot(q, xhat)))

    out._backward = _bw
    return out


def mean_pool(rows: list[Node]) -> Node:
    """Elementwise mean of equally-shaped nodes; gradient splits as g/k per row."""
    if not rows:
        raise EmptySequenceError("mean_pool: no rows to pool")
    shape = rows[0].value.shape
    for r in rows[1:]:
        if r.value.shape != shape:
            raise DimensionError(f"mean_pool: mixed shapes {shape} and {r.value.shape}")
    k = len(rows)
    total = rows[0].value.copy()
    for r in rows[1:]:
        total += r.value
    out = Node(total / k, tuple(rows), "mean_pool")

    def _bw(g: Array) -> None:
        share = g / k
        for r in rows:
            r.accumulate(share)

    out._backward = _bw
    return out


def add(a: Node, b: Node) -> Node:
    """Elementwise sum of two equally-shaped nodes."""
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Node(a.value + b.value, (a, b), "add")

    def _bw(g: Array) -> None:
        a.accumulate(g)
        b.accumulate(g)

    out._backward = _bw
    return out


def mul(a: Node, b: Node) -> Node:
    """Elementwise product of two equally-shaped nodes."""
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Node(a.value * b.value, (a, b), "mul")

    def _bw(g: Array) -> None:
        a.accumulate(b.value * g)
        b.accumulate(a.value * g)

    out._backward = _bw
    return out


def affine(x: Node, scale: float, shift: float) -> Node:
    """``scale * x + shift`` with plain-float coefficients."""
    out = Node(scale * x.value + shift, (x,), "affine")

    def _bw(g: Array) -> None:
        x.accumulate(scale * g)

    out._backward = _bw
    return out


def sigmoid(x: Node) -> Node:
    """Elementwise logistic function, computed stably for large |x|."""
    v = x.value
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Node(s, (x,), "sigmoid")

    def _bw(g: Array) -> None:
        x.accumulate(s * (1.0 - s) * g)

    out._backward = _bw
    return out


def take_row(table: Node, index: int) -> Node:
    """Select row ``index`` of a matrix; the gradient scatters back into that row."""
    if table.value.ndim != 2:
        raise DimensionError(f"take_row: expected a matrix, got shape {table.shape}")
    if not 0 <= index < table.value.shape[0]:
        raise LabelError(f"take_row: row {index} outside [0, {table.value.shape[0]})")
    out = Node(table.value[index].copy(), (table,), "take_row")

    def _bw(g: Array) -> None:
        if table.grad is None:
            table.grad = np.zeros_like(table.value)
        table.grad[index] += g

    out._backward = _bw
    return out


def softmax(logits: Array) -> Array:
    """Stable softmax of a plain logits vector (max-subtraction)."""
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def softmax_xent(logits: Node, target: int) -> tuple[Node, Array]:
    """Cross-entropy of a softmax distribution against a single class index.

    Returns the scalar loss node and the probability vector.  The gradient
    on the logits is ``probs - onehot(target)``.
    """
    if logits.value.ndim != 1:
        raise DimensionError(f"softmax_xent: logits must be a vector, got shape {logits.shape}")
    C = logits.value.shape[0]
    if not 0 <= target < C:
        raise LabelError(f"softmax_xent: target {target} outside [0, {C})")
    _check_finite(logits.value, "softmax_xent(logits)")
    z = logits.value - np.max(logits.value)
    log_probs = z - np.log(np.exp(z).sum())
    probs = np.exp(log_probs)
    out = Node(_check_finite(-log_probs[target], "softmax_xent"), (logits,), "softmax_xent")

    def _bw(g: Array) -> None:
        delta = probs.copy()
        delta[target] -= 1.0
        logits.accumulate(g * delta)

    out._backward = _bw
    return out, probs


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into each reachable node's ``grad``.

    The root must be scalar.  Accumulation happens in reverse topological
    order fixed by graph construction, so results are deterministic.
    """
    if root.value.shape != ():
        raise DimensionError(f"backward expects a scalar root, got shape {root.value.shape}")
    order = _topo_order(root)
    root.accumulate(1.0)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(f, params: dict[str, Array], step: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` maps a dict of leaf nodes (same keys as ``params``) to a scalar
    node.  Returns the maximum over all parameter entries of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """

    def evaluate(arrays: dict[str, Array]) -> tuple[Node, dict[str, Node]]:
        leaves = {name: Node(arr) for name, arr in arrays.items()}
        out = f(leaves)
        if out.value.shape != ():
            raise DimensionError("grad_check: objective must be scalar")
        if not np.isfinite(out.value):
            raise NumericInstabilityError("grad_check: objective is non-finite")
        return out, leaves

    base = {name: np.array(arr, dtype=np.float64) for name, arr in params.items()}
    out, leaves = evaluate(base)
    backward(out)

    worst = 0.0
    for name, arr in base.items():
        grad = leaves[name].grad
        analytic = np.zeros_like(arr) if grad is None else grad
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + step
            f_plus = float(evaluate(base)[0].value)
            arr[idx] = keep - step
            f_minus = float(evaluate(base)[0].value)
            arr[idx] = keep
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
