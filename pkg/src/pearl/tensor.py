"""Dense tensors with reverse-mode autodiff, an Adam optimizer, and gradient checking.

The op set is deliberately small: exactly what linear probes, MLP heads,
bilinear score functions, and a GRU cell need. All math runs in float64;
32-bit floats appear only at file-format boundaries elsewhere in the package.

Broadcasting is restricted to bias-vector addition over matrix rows. Anything
else raises, so shape bugs surface immediately instead of silently averaging
away.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "GraphError",
    "concat",
    "softmax_cross_entropy",
    "bilinear",
    "Adam",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GraphError(ValueError):
    """Graph-level contract violated (e.g. backward from a non-scalar)."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > 3:
        raise DimensionError(f"rank {arr.ndim} tensors unsupported (max 3)")
    return arr


class Tensor:
    """A node in the computation graph: float64 data plus an optional gradient.

    Leaves created with ``requires_grad=True`` are trainable parameters.
    Operations on tensors record backward closures; ``backward()`` on a scalar
    result accumulates gradients into every reachable parameter.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = "leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = _op
        self._parents = tuple(_parents)
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=np.float64))

    def _make(self, data, parents, op) -> "Tensor":
        out = Tensor(data, _parents=parents, _op=op)
        out.requires_grad = any(p.requires_grad for p in parents)
        return out

    # -- arithmetic ------------------------------------------------------------

    @staticmethod
    def _addable(a: np.ndarray, b: np.ndarray) -> bool:
        # same shape, a scalar on either side, or bias-vector addition over rows
        if a.shape == b.shape or a.shape == () or b.shape == ():
            return True
        return a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]

    @staticmethod
    def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
        if g.shape == shape:
            return g
        if shape == ():
            return g.sum()
        return g.sum(axis=0)  # bias vector over rows

    def __add__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        if not self._addable(a, b):
            raise DimensionError(f"add shapes {a.shape} and {b.shape}")
        out = self._make(a + b, (self, other), "add")

        def backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(self._reduce_to(g, a.shape))
            if other.requires_grad:
                other._accumulate(self._reduce_to(g, b.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        if not self._addable(a, b):
            raise DimensionError(f"subtract shapes {a.shape} and {b.shape}")
        out = self._make(a - b, (self, other), "sub")

        def backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(self._reduce_to(g, a.shape))
            if other.requires_grad:
                other._accumulate(-self._reduce_to(g, b.shape))

        out._backward = backward
        return out

    def __rsub__(self, other) -> "Tensor":
        return self._lift(np.broadcast_to(np.asarray(other, dtype=np.float64), self.data.shape)).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise DimensionError(f"multiply shapes {a.shape} and {b.shape}")
        out = self._make(a * b, (self, other), "mul")

        def backward():
            g = out.grad
            if self.requires_grad:
                ga = g * b
                self._accumulate(ga.sum() if a.shape == () else ga)
            if other.requires_grad:
                gb = g * a
                other._accumulate(gb.sum() if b.shape == () else gb)

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __matmul__(self, other) -> "Tensor":
        other = self._lift(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shapes {a.shape} and {b.shape}")
        out = self._make(a @ b, (self, other), "matmul")

        def backward():
            g = out.grad
            if self.requires_grad:
                self._accumulate(g @ b.T)
            if other.requires_grad:
                other._accumulate(a.T @ g)

        out._backward = backward
        return out

    def matmul(self, other) -> "Tensor":
        return self @ other

    # -- elementwise nonlinearities ---------------------------------------------

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        out = self._make(t, (self,), "tanh")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * (1.0 - t * t))

        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        # stable in both tails
        x = self.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = self._make(s, (self,), "sigmoid")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * s * (1.0 - s))

        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        out = self._make(np.maximum(self.data, 0.0), (self,), "relu")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * (self.data > 0.0))

        out._backward = backward
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = self._make(e, (self,), "exp")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad * e)

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = self._make(np.log(self.data), (self,), "log")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)

        out._backward = backward
        return out

    # -- shape ops ---------------------------------------------------------------

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise DimensionError(f"transpose needs a matrix, got shape {self.data.shape}")
        out = self._make(self.data.T.copy(), (self,), "transpose")

        def backward():
            if self.requires_grad:
                self._accumulate(out.grad.T)

        out._backward = backward
        return out

    def __getitem__(self, key) -> "Tensor":
        view = self.data[key]
        out = self._make(np.array(view, copy=True), (self,), "slice")

        def backward():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                g[key] = out.grad
                self._accumulate(g)

        out._backward = backward
        return out

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out = self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def backward():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape))

        out._backward = backward
        return out

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        out = self._make(self.data.mean(axis=axis, keepdims=keepdims), (self,), "mean")

        def backward():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.data.shape) / n)

        out._backward = backward
        return out

    # -- backward ------------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode accumulation from this scalar into every parameter."""
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.data.shape}")
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; gradient splits back by segment."""
    tensors = [Tensor._lift(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, _parents=tuple(tensors), _op="concat")
    out.requires_grad = any(t.requires_grad for t in tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                t._accumulate(g[tuple(idx)])

    out._backward = backward
    return out


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean of -log softmax(logits)[target] over the batch, max-stabilized.

    ``targets`` is an integer vector of class indices, one per row.
    """
    logits = Tensor._lift(logits)
    x = logits.data
    if x.ndim != 2:
        raise DimensionError(f"logits must be batch x classes, got shape {x.shape}")
    t = np.asarray(targets)
    if t.ndim != 1 or t.shape[0] != x.shape[0]:
        raise DimensionError(f"targets shape {t.shape} does not match batch {x.shape[0]}")
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError("targets must be integer class indices")
    if t.size and (t.min() < 0 or t.max() >= x.shape[1]):
        raise IndexError(f"target index out of range for {x.shape[1]} classes")

    batch = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(batch), t].mean()
    out = Tensor(loss, _parents=(logits,), _op="softmax_xent")
    out.requires_grad = logits.requires_grad

    def backward():
        if logits.requires_grad:
            p = np.exp(log_probs)
            p[np.arange(batch), t] -= 1.0
            logits._accumulate(out.grad * p / batch)

    out._backward = backward
    return out


def bilinear(u: Tensor, w: Tensor, v: Tensor) -> Tensor:
    """Bilinear form u^T W v for a row vector u (1,k) and column vector v (m,1)."""
    return (u @ w) @ v


class Adam:
    """Adam with bias correction over a fixed parameter list.

    Parameters with a ``None`` gradient are treated as having zero gradient,
    so untouched parameters are left exactly unchanged.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif g.shape != p.data.shape:
                raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / bc1
            v_hat = self._v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_check(fn, tensors, h: float = 1e-5) -> float:
    """Max relative error between backward() gradients and central differences.

    ``fn`` maps the given tensors to a scalar Tensor. Relative error per
    component uses max(|numeric|, |analytic|, 1e-6) as denominator, so a
    planted wrong gradient of 2x the true value reports an error near 1.
    """
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    loss = fn(*tensors)
    loss.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = fn(*tensors).item()
            flat[idx] = orig - h
            f_minus = fn(*tensors).item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = ana.reshape(-1)[idx]
            rel = abs(numeric - a) / max(abs(numeric), abs(a), 1e-6)
            worst = max(worst, rel)
    return worst
