"""Reverse-mode automatic differentiation on a recording tape.

Deliberately small surface: rank <= 2 float64 tensors and exactly the
operations the encoders and contrastive losses need. No general
broadcasting (the single exception: adding a 1xM bias row to an NxM
matrix). Every op's gradient is covered by finite-difference tests, which
is the point of keeping the op set enumerable.

A tape is single-threaded; independent tapes can run concurrently.
Gradients accumulate additively into ``Tensor.grad`` until ``zero_grad``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteValueError, NonScalarRootError, ShapeMismatchError, ZeroVectorError

Array = np.ndarray


class Tensor:
    """One node of the computation graph: a value plus its backward rule."""

    __slots__ = ("value", "grad", "parents", "backward_rule", "tape", "name")

    def __init__(
        self,
        value: Array,
        parents: tuple["Tensor", ...] = (),
        backward_rule: Callable[[Array], Sequence[Array | None]] | None = None,
        tape: "Tape | None" = None,
        name: str | None = None,
    ):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeMismatchError(f"rank {value.ndim} > 2 unsupported")
        self.value = value
        self.grad: Array | None = None
        self.parents = parents
        self.backward_rule = backward_rule
        self.tape = tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.value.shape})"


class Tape:
    """Ordered node list in creation order (parents always precede children)."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def leaf(self, value: Array, name: str | None = None) -> Tensor:
        node = Tensor(value, tape=self, name=name)
        self.nodes.append(node)
        return node

    def zero_grad(self) -> None:
        for node in self.nodes:
            node.grad = None


def constant(value: Array) -> Tensor:
    """A tensor outside any tape; gradients never propagate into it."""
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))


def _register(value: Array, parents: tuple[Tensor, ...], backward_rule) -> Tensor:
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and tape is not p.tape:
                raise ValueError("operands belong to different tapes")
            tape = p.tape
    node = Tensor(value, parents, backward_rule, tape)
    if tape is not None:
        tape.nodes.append(node)
    return node


def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    """Matrix product with optional operand transposes."""
    a, b = _as_tensor(a), _as_tensor(b)
    av = a.value.T if transpose_a else a.value
    bv = b.value.T if transpose_b else b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeMismatchError(f"matmul {a.shape} x {b.shape} (ta={transpose_a}, tb={transpose_b})")
    out = av @ bv

    def backward(grad: Array):
        da = grad @ bv.T
        db = av.T @ grad
        return (da.T if transpose_a else da, db.T if transpose_b else db)

    return _register(out, (a, b), backward)


def add(a, b) -> Tensor:
    """Elementwise sum; a bias row (shape (M,) or (1, M)) broadcasts over the
    rows of an NxM matrix. No other broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    row_broadcast = (
        a.value.ndim == 2
        and (
            (b.value.ndim == 1 and b.value.shape[0] == a.value.shape[1])
            or (b.value.ndim == 2 and b.value.shape == (1, a.value.shape[1]) and a.value.shape[0] != 1)
        )
    )
    if not row_broadcast and a.value.shape != b.value.shape:
        raise ShapeMismatchError(f"add {a.shape} + {b.shape}")
    out = a.value + b.value

    def backward(grad: Array):
        if row_broadcast:
            db = grad.sum(axis=0, keepdims=b.value.ndim == 2)
            return grad, db
        return grad, grad

    return _register(out, (a, b), backward)


def relu(a) -> Tensor:
    """max(x, 0); subgradient at 0 is 0."""
    a = _as_tensor(a)
    mask = a.value > 0.0

    def backward(grad: Array):
        return (grad * mask,)

    return _register(np.where(mask, a.value, 0.0), (a,), backward)


def scale(a, s) -> Tensor:
    """Multiply tensor ``a`` by scalar node ``s``; differentiable in both."""
    a, s = _as_tensor(a), _as_tensor(s)
    if s.value.ndim != 0:
        raise ShapeMismatchError(f"scale factor must be scalar, got shape {s.shape}")
    sv = float(s.value)

    def backward(grad: Array):
        return grad * sv, np.asarray(np.sum(grad * a.value))

    return _register(a.value * sv, (a, s), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.value)

    def backward(grad: Array):
        return (grad * out,)

    return _register(out, (a,), backward)


def reciprocal(a) -> Tensor:
    """1/x for a scalar node (used to turn a temperature into a logit scale)."""
    a = _as_tensor(a)
    if a.value.ndim != 0:
        raise ShapeMismatchError("reciprocal supports scalars only")
    out = 1.0 / a.value

    def backward(grad: Array):
        return (np.asarray(-grad * out * out),)

    return _register(out, (a,), backward)


def sum_all(a) -> Tensor:
    """Sum of all entries, as a scalar node."""
    a = _as_tensor(a)

    def backward(grad: Array):
        return (np.full_like(a.value, float(grad)),)

    return _register(np.asarray(a.value.sum()), (a,), backward)


def row_log_softmax(a) -> Tensor:
    """log softmax along each row, computed with max subtraction.

    The shift keeps exp() in range even for logits around 1/tau with
    tau ~ 0.01 and cancels exactly in the result.
    """
    a = _as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeMismatchError(f"row_log_softmax needs a matrix, got shape {a.shape}")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_z
    softmax = np.exp(out)

    def backward(grad: Array):
        return (grad - softmax * grad.sum(axis=1, keepdims=True),)

    return _register(out, (a,), backward)


def mean_diag_negate(a) -> Tensor:
    """-mean(diagonal); applied to row-log-softmax logits this is the
    matched-pair cross-entropy in one retrieval direction."""
    a = _as_tensor(a)
    if a.value.ndim != 2 or a.value.shape[0] != a.value.shape[1]:
        raise ShapeMismatchError(f"mean_diag_negate needs a square matrix, got {a.shape}")
    n = a.value.shape[0]

    def backward(grad: Array):
        g = np.zeros_like(a.value)
        np.fill_diagonal(g, -float(grad) / n)
        return (g,)

    return _register(np.asarray(-np.trace(a.value) / n), (a,), backward)


def row_l2_normalize(a) -> Tensor:
    """Scale each row to unit norm (the projection onto the unit sphere)."""
    a = _as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeMismatchError(f"row_l2_normalize needs a matrix, got shape {a.shape}")
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ZeroVectorError("cannot normalize a zero row")
    out = a.value / norms

    def backward(grad: Array):
        dot = np.sum(grad * out, axis=1, keepdims=True)
        return ((grad - out * dot) / norms,)

    return _register(out, (a,), backward)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into every tape node's ``grad``.

    Adjoints are computed fresh per call and added into the persistent
    accumulators, so two calls without a grad reset yield exactly twice
    the single-call gradient.
    """
    if root.value.ndim != 0:
        raise NonScalarRootError(f"root must be scalar, got shape {root.shape}")
    if root.tape is None:
        raise ValueError("root is not attached to a tape")
    adjoint: dict[int, Array] = {id(root): np.asarray(1.0)}
    for node in reversed(root.tape.nodes):
        grad = adjoint.get(id(node))
        if grad is None or node.backward_rule is None:
            continue
        parent_grads = node.backward_rule(grad)
        for parent, pgrad in zip(node.parents, parent_grads):
            if pgrad is None or parent.tape is None:
                continue
            acc = adjoint.get(id(parent))
            adjoint[id(parent)] = pgrad if acc is None else acc + pgrad
    for node in root.tape.nodes:
        grad = adjoint.get(id(node))
        if grad is None:
            continue
        node.grad = grad.copy() if node.grad is None else node.grad + grad


def finite_difference_check(
    f: Callable[[dict[str, Array]], tuple[float, dict[str, Array]]],
    params: dict[str, Array],
    h: float = 1e-5,
) -> float:
    """Compare analytic gradients against central differences.

    ``f(params)`` must return ``(value, grads)`` with one gradient array per
    parameter. Returns the max over coordinates of
    |analytic - numeric| / max(1e-8, |numeric|).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    value, grads = f(params)
    if not np.isfinite(value):
        raise NonFiniteValueError("objective is non-finite at the base point")
    worst = 0.0
    for name, base in params.items():
        base = np.asarray(base, dtype=np.float64)
        analytic = np.asarray(grads[name], dtype=np.float64)
        if analytic.shape != base.shape:
            raise ShapeMismatchError(f"gradient shape mismatch for {name!r}")
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            perturbed = dict(params)
            bumped = base.copy().reshape(-1)
            bumped[i] = orig + h
            perturbed[name] = bumped.reshape(base.shape)
            up, _ = f(perturbed)
            bumped[i] = orig - h
            perturbed[name] = bumped.reshape(base.shape)
            down, _ = f(perturbed)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteValueError(f"objective non-finite while perturbing {name!r}")
            numeric = (up - down) / (2.0 * h)
            err = abs(float(analytic.reshape(-1)[i]) - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, err)
    return worst
