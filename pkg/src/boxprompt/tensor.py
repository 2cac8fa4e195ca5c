"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array (float32 for training, float64 for
gradient checks) and, while autograd is enabled, records the producing
operation so a later :func:`backward` call can traverse the graph.

Gradients accumulate on *leaf* tensors created with ``requires_grad=True``
(the model parameters); intermediate gradients live only for the duration
of a backward pass.  Repeated backward calls without `zero_grad` add up.

Every operation checks its output for NaN/Inf unless the check is
suspended; a non-finite value anywhere is treated as a hard error and the
raised :class:`NonFiniteError` names the producing operation.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(ArithmeticError):
    """A forward operation produced NaN or Inf."""


_grad_enabled = True
_finite_checks = True


@contextmanager
def no_grad():
    """Suspend graph recording (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextmanager
def finite_checks(enabled: bool):
    global _finite_checks
    prev = _finite_checks
    _finite_checks = enabled
    try:
        yield
    finally:
        _finite_checks = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, dtype=np.float32, requires_grad: bool = False, op: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        if _finite_checks and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor (op={op or 'leaf'}, shape={arr.shape})")

    # -- construction used by ops --------------------------------------
    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple["Tensor", ...], backward_fn, op: str) -> "Tensor":
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = needs
        out.op = op
        if needs:
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out._parents = ()
            out._backward_fn = None
        if _finite_checks and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by op '{op}' (shape={data.shape})")
        return out

    # -- basic introspection --------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype, requires_grad=False)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag}, op={self.op})"

    # operators delegate to the functional ops (imported lazily to avoid
    # a circular import at module load)
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__

    def backward(self):
        backward(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Post-order over the recorded graph, iterative to spare the stack."""
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable leaf parameter.

    ``loss`` must be scalar.  Gradients of intermediate nodes are held in
    a transient table; leaf gradients accumulate across calls.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is not None:
            for parent, pg in node._backward_fn(g):
                if not parent.requires_grad:
                    continue
                if parent.is_leaf():
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad += pg
                else:
                    acc = grads.get(id(parent))
                    if acc is None:
                        grads[id(parent)] = pg.copy() if pg.base is not None or pg is g else pg
                    else:
                        acc += pg
        elif node.requires_grad and node.is_leaf():
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g


def first_nonfinite(root: Tensor) -> str | None:
    """Name the earliest tensor in the graph under ``root`` holding NaN/Inf."""
    bad = None
    for node in _topo_order(root):
        if not np.all(np.isfinite(node.data)):
            bad = node.op or "leaf"
            break
    return bad
