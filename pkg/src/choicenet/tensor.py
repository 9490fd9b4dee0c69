"""Minimal dense-tensor library with reverse-mode automatic differentiation.

Tensors are float64 numpy arrays of rank <= 3 (batch x set x feature at most).
Operations on tensors that require gradients record a computation graph;
``Tensor.backward()`` on a scalar runs the tape in reverse topological order
and accumulates gradients into every ``requires_grad`` leaf.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class DegenerateRowError(ValueError):
    """Raised when a softmax row has no unmasked entry."""


class NonFiniteError(FloatingPointError):
    pass


MAX_RANK = 3


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds supported rank {MAX_RANK}")
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """Dense float64 array participating in reverse-mode autodiff.

    A tensor produced by an op holds references to its parents and a backward
    closure; the graph is only recorded while some ancestor requires grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(*shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward, op: str) -> "Tensor":
        _check_finite(data, op)
        track = any(p.requires_grad or p._parents or p._backward for p in parents)
        out = Tensor(data)
        if track:
            out.requires_grad = True
            out.grad = np.zeros_like(out.data)
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        if self.shape != other.shape:
            raise ShapeError(f"add shapes {self.shape} vs {other.shape}")

        def backward(dy, a=self, b=other):
            a.grad += dy
            b.grad += dy

        return Tensor._from_op(self.data + other.data, (self, other), backward, "add")

    def __mul__(self, other: "Tensor") -> "Tensor":
        if self.shape != other.shape:
            raise ShapeError(f"mul shapes {self.shape} vs {other.shape}")

        def backward(dy, a=self, b=other):
            a.grad += dy * b.data
            b.grad += dy * a.data

        return Tensor._from_op(self.data * other.data, (self, other), backward, "mul")

    def scale(self, c: float) -> "Tensor":
        c = float(c)

        def backward(dy, a=self):
            a.grad += dy * c

        return Tensor._from_op(self.data * c, (self,), backward, "scale")

    def shift(self, c: float) -> "Tensor":
        """Add a python scalar to every entry."""
        c = float(c)

        def backward(dy, a=self):
            a.grad += dy

        return Tensor._from_op(self.data + c, (self,), backward, "shift")

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self + other.scale(-1.0)

    def add_bias(self, bias: "Tensor") -> "Tensor":
        """Add a rank-1 bias along the last axis."""
        if bias.data.ndim != 1 or bias.shape[0] != self.shape[-1]:
            raise ShapeError(f"bias shape {bias.shape} vs last dim {self.shape}")

        def backward(dy, a=self, b=bias):
            a.grad += dy
            axes = tuple(range(dy.ndim - 1))
            b.grad += dy.sum(axis=axes) if axes else dy

        return Tensor._from_op(self.data + bias.data, (self, bias), backward, "add_bias")

    # -- linear algebra -------------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        a, b = self.data, other.data
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul inner dims {a.shape} vs {b.shape}")

        def backward(dy, ta=self, tb=other):
            bt = np.swapaxes(tb.data, -1, -2)
            at = np.swapaxes(ta.data, -1, -2)
            da = np.matmul(dy, bt)
            db = np.matmul(at, dy)
            # collapse broadcast batch axes back onto the operand's shape
            while da.ndim > ta.data.ndim:
                da = da.sum(axis=0)
            while db.ndim > tb.data.ndim:
                db = db.sum(axis=0)
            ta.grad += da
            tb.grad += db

        return Tensor._from_op(np.matmul(a, b), (self, other), backward, "matmul")

    def transpose_last(self) -> "Tensor":
        if self.data.ndim < 2:
            raise ShapeError("transpose_last needs rank >= 2")

        def backward(dy, a=self):
            a.grad += np.swapaxes(dy, -1, -2)

        return Tensor._from_op(np.swapaxes(self.data, -1, -2), (self,), backward, "transpose")

    # -- nonlinearities -------------------------------------------------------

    def relu(self) -> "Tensor":
        # subgradient at 0 is 0
        def backward(dy, a=self):
            a.grad += dy * (a.data > 0)

        return Tensor._from_op(np.maximum(self.data, 0.0), (self,), backward, "relu")

    def one_plus_relu(self) -> "Tensor":
        def backward(dy, a=self):
            a.grad += dy * (a.data > 0)

        return Tensor._from_op(1.0 + np.maximum(self.data, 0.0), (self,), backward, "one_plus_relu")

    def sigmoid(self) -> "Tensor":
        y = 1.0 / (1.0 + np.exp(-self.data))

        def backward(dy, a=self, yv=y):
            a.grad += dy * yv * (1.0 - yv)

        return Tensor._from_op(y, (self,), backward, "sigmoid")

    def log(self, floor: float = 0.0) -> "Tensor":
        """Natural log; values below ``floor`` are clamped before the log."""
        x = np.maximum(self.data, floor) if floor > 0 else self.data
        if np.any(x <= 0):
            raise NonFiniteError("log of non-positive value without floor")

        def backward(dy, a=self, xv=x):
            g = dy / xv
            if floor > 0:
                g = np.where(a.data >= floor, g, 0.0)
            a.grad += g

        return Tensor._from_op(np.log(x), (self,), backward, "log")

    # -- reductions -----------------------------------------------------------

    def sum(self) -> "Tensor":
        def backward(dy, a=self):
            a.grad += dy * np.ones_like(a.data)

        return Tensor._from_op(np.asarray(self.data.sum()), (self,), backward, "sum")

    def mean(self) -> "Tensor":
        n = self.data.size

        def backward(dy, a=self):
            a.grad += dy * np.full_like(a.data, 1.0 / n)

        return Tensor._from_op(np.asarray(self.data.mean()), (self,), backward, "mean")

    def reshape(self, *shape) -> "Tensor":
        if int(np.prod(shape)) != self.data.size:
            raise ShapeError(f"cannot reshape {self.shape} to {shape}")

        def backward(dy, a=self):
            a.grad += dy.reshape(a.data.shape)

        return Tensor._from_op(self.data.reshape(shape), (self,), backward, "reshape")

    # -- structured ops -------------------------------------------------------

    def masked_softmax(self, mask: np.ndarray) -> "Tensor":
        """Softmax over the last axis restricted to unmasked (True) entries.

        Masked entries are exactly 0 in the output. Implemented with a large
        negative sentinel plus row-max subtraction for stability.
        """
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), self.shape)
        if not mask.any(axis=-1).all():
            raise DegenerateRowError("masked_softmax: fully-masked row")
        neg = np.where(mask, self.data, -np.inf)
        rowmax = neg.max(axis=-1, keepdims=True)
        e = np.exp(np.where(mask, self.data - rowmax, -np.inf))
        e = np.where(mask, e, 0.0)
        y = e / e.sum(axis=-1, keepdims=True)

        def backward(dy, a=self, yv=y, m=mask):
            dot = (dy * yv).sum(axis=-1, keepdims=True)
            a.grad += np.where(m, yv * (dy - dot), 0.0)

        return Tensor._from_op(y, (self,), backward, "masked_softmax")

    def layer_norm(self, gain: "Tensor", bias: "Tensor", eps: float = 1e-5) -> "Tensor":
        d = self.shape[-1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeError("layer_norm gain/bias must match last dim")
        mu = self.data.mean(axis=-1, keepdims=True)
        var = self.data.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (self.data - mu) * inv

        def backward(dy, a=self, g=gain, b=bias, xh=xhat, iv=inv):
            gdy = dy * g.data
            m1 = gdy.mean(axis=-1, keepdims=True)
            m2 = (gdy * xh).mean(axis=-1, keepdims=True)
            a.grad += (gdy - m1 - xh * m2) * iv
            axes = tuple(range(dy.ndim - 1))
            g.grad += (dy * xh).sum(axis=axes) if axes else dy * xh
            b.grad += dy.sum(axis=axes) if axes else dy

        return Tensor._from_op(
            xhat * gain.data + bias.data, (self, gain, bias), backward, "layer_norm"
        )

    def dropout(self, rate: float, training: bool, rng: np.random.Generator) -> "Tensor":
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate {rate} outside [0, 1)")
        if not training or rate == 0.0:
            return self
        keep = rng.random(self.shape) >= rate
        scale = 1.0 / (1.0 - rate)

        def backward(dy, a=self, k=keep):
            a.grad += dy * k * scale

        return Tensor._from_op(self.data * keep * scale, (self,), backward, "dropout")

    # -- backward pass --------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; accumulates into leaf ``grad``."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` with gradient routed back to each slice."""
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(dy, ts=tensors, offs=offsets, ax=axis):
        for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
            idx = [slice(None)] * dy.ndim
            idx[ax] = slice(lo, hi)
            t.grad += dy[tuple(idx)]

    return Tensor._from_op(out, tuple(tensors), backward, "concat")
