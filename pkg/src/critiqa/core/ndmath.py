"""
Reverse-mode automatic differentiation for critiqa

A dynamic tape over dense numpy arrays: every op builds a Tensor that remembers
its parents and a closure that pushes the output gradient back to them. The
graph is rebuilt for every training step, so variable-length sequences need no
padding. Also hosts the parameter store, Adam, global-norm clipping and the
finite-difference gradient checker.

Random numbers come from numpy's PCG64 generator throughout.
"""

import hashlib
import threading
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigError, GradientError, ModelError, ShapeError

BCE_EPSILON = 1e-7

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class _GraphState(threading.local):
    """Per-thread recording flag and working float type."""

    def __init__(self):
        self.recording = True
        self.dtype = np.float32


_state = _GraphState()


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    previous = _state.recording
    _state.recording = False
    try:
        yield
    finally:
        _state.recording = previous


@contextmanager
def precision(dtype):
    """Select the float type new tensors are created with."""
    previous = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


def default_dtype():
    return _state.dtype


class Tensor:
    """A dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        op: str = "",
    ):
        self.data = np.asarray(data, dtype=_state.dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        backward(self)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __getitem__(self, index) -> "Tensor":
        out_data = self.data[index]

        def _backward(g: np.ndarray) -> None:
            full = np.zeros_like(self.data)
            full[index] = g
            self._accumulate(full)

        return _make(out_data, (self,), _backward, "index")

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    needs_grad = _state.recording and any(p.requires_grad for p in parents)
    if not needs_grad:
        return Tensor(data, op=op)
    out = Tensor(data, requires_grad=True, _parents=parents, op=op)
    out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# Core ops


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), _backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), _backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _backward, "mul")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product of 1-D or 2-D operands (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: expected 1-D or 2-D operands, got {a.shape} and {b.shape}")
    a2 = a.data.reshape(1, -1) if a.ndim == 1 else a.data
    b2 = b.data.reshape(-1, 1) if b.ndim == 1 else b.data
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out2 = a2 @ b2
    out_data = np.matmul(a.data, b.data)

    def _backward(g: np.ndarray) -> None:
        g2 = g.reshape(out2.shape)
        if a.requires_grad:
            a._accumulate((g2 @ b2.T).reshape(a.shape))
        if b.requires_grad:
            b._accumulate((a2.T @ g2).reshape(b.shape))

    return _make(out_data, (a, b), _backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    def _backward(g: np.ndarray) -> None:
        a._accumulate(g.T)

    return _make(a.data.T, (a,), _backward, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no operands")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out_data, tuple(tensors), _backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: no operands")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: incompatible shapes {' and '.join(map(str, sorted(shapes)))}")
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def _backward(g: np.ndarray) -> None:
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return _make(out_data, tuple(tensors), _backward, "stack")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def _backward(g: np.ndarray) -> None:
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), _backward, "tanh")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype, copy=False)


def sigmoid(a: Tensor) -> Tensor:
    out_data = _stable_sigmoid(a.data)

    def _backward(g: np.ndarray) -> None:
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), _backward, "sigmoid")


def clip(a: Tensor, low: float, high: float) -> Tensor:
    out_data = np.clip(a.data, low, high)
    inside = (a.data >= low) & (a.data <= high)

    def _backward(g: np.ndarray) -> None:
        a._accumulate(g * inside)

    return _make(out_data, (a,), _backward, "clip")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray) -> None:
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return _make(out_data, (a,), _backward, "softmax")


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    out_data = a.data.sum(axis=axis)

    def _backward(g: np.ndarray) -> None:
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(out_data, (a,), _backward, "sum")


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    out_data = a.data.mean(axis=axis)

    def _backward(g: np.ndarray) -> None:
        scaled = g / count
        if axis is None:
            a._accumulate(np.broadcast_to(scaled, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(scaled, axis), a.shape))

    return _make(out_data, (a,), _backward, "mean")


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of ``table`` for each id, as a len(ids) x dim matrix."""
    index = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: id out of range for table of shape {table.shape}"
        )

    def _backward(g: np.ndarray) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        table._accumulate(full)

    return _make(table.data[index], (table,), _backward, "embedding")


# Losses


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], via the log-sum-exp form."""
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy: expected a vector of logits, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise ShapeError(f"cross_entropy: target {target} out of range for {n} logits")
    shift = logits.data.max()
    exp = np.exp(logits.data - shift)
    total = exp.sum()
    loss = np.log(total) + shift - logits.data[target]

    def _backward(g: np.ndarray) -> None:
        grad = exp / total
        grad[target] -= 1.0
        logits._accumulate(g * grad)

    return _make(np.asarray(loss), (logits,), _backward, "cross_entropy")


def binary_cross_entropy(p: ArrayLike, label: int, epsilon: float = BCE_EPSILON) -> Tensor:
    """-[label log p + (1 - label) log(1 - p)] with p clamped into [eps, 1 - eps]."""
    p = as_tensor(p)
    raw = p.data.reshape(())
    clamped = np.clip(raw, epsilon, 1.0 - epsilon)
    if label == 1:
        loss = -np.log(clamped)
        slope = -1.0 / clamped
    else:
        loss = -np.log(1.0 - clamped)
        slope = 1.0 / (1.0 - clamped)
    inside = float(epsilon <= raw <= 1.0 - epsilon)

    def _backward(g: np.ndarray) -> None:
        p._accumulate(np.broadcast_to(g * slope * inside, p.shape))

    return _make(np.asarray(loss), (p,), _backward, "bce")


# Backward pass


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad on every parameter reachable from a scalar loss."""
    if loss.size != 1:
        raise GradientError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# Parameters and optimisation


class ParamStore:
    """Ordered name -> Tensor map of trainable parameters."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ModelError(f"duplicate parameter name {name}")
        tensor = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> List[str]:
        return list(self._params)

    def num_parameters(self) -> int:
        return int(np.sum([t.size for t in self._params.values()]))

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def freeze(self) -> None:
        for tensor in self._params.values():
            tensor.requires_grad = False
            tensor.grad = None

    @property
    def frozen(self) -> bool:
        return not any(t.requires_grad for t in self._params.values())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_snapshot(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if snapshot[name].shape != t.shape:
                raise ShapeError(
                    f"parameter {name}: snapshot shape {snapshot[name].shape} != {t.shape}"
                )
            t.data = np.array(snapshot[name], dtype=np.float32)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode("utf-8"))
            h.update(repr(t.shape).encode("ascii"))
            h.update(t.data.astype("<f4").tobytes())
        return h.hexdigest()


@dataclass
class OptimizerState:
    """Adam moments and hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def clip_grad_norm(params: ParamStore, max_norm: float = 5.0) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    grads = [t.grad for _, t in params.items() if t.requires_grad and t.grad is not None]
    total = float(np.sqrt(np.sum([np.sum(g.astype(np.float64) ** 2) for g in grads]))) if grads else 0.0
    if total > max_norm > 0:
        scale = np.float32(max_norm / (total + 1e-12))
        for g in grads:
            g *= scale
    return total


def optimizer_step(params: ParamStore, state: OptimizerState) -> None:
    """One Adam update with bias correction; gradients are zeroed afterwards."""
    trainable = [(name, t) for name, t in params.items() if t.requires_grad]
    for name, t in trainable:
        if t.grad is None:
            raise GradientError(f"optimizer_step: parameter {name} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, t in trainable:
        g = t.grad.astype(np.float32, copy=False)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            v = np.zeros_like(t.data)
        m = (b1 * m + (1.0 - b1) * g).astype(np.float32)
        v = (b2 * v + (1.0 - b2) * g * g).astype(np.float32)
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        t.data = (t.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(
            np.float32
        )
        t.grad = None


# Gradient checking

GRAD_CHECK_EPS_RANGE = (1e-4, 1e-2)


def grad_check(
    build_loss: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-3,
) -> float:
    """Max relative error between backward() and central finite differences.

    Runs in float64 and restores the float32 parameters afterwards.
    """
    low, high = GRAD_CHECK_EPS_RANGE
    if not low <= eps <= high:
        raise ConfigError(f"grad_check: eps must be in [{low}, {high}], got {eps}")
    originals = params.snapshot()
    try:
        with precision(np.float64):
            for _, t in params.items():
                t.data = t.data.astype(np.float64)
                t.grad = None
            loss = build_loss()
            backward(loss)
            analytic = {
                name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()
            }
            worst = 0.0
            with no_grad():
                for name, t in params.items():
                    flat = t.data.reshape(-1)
                    grad_flat = analytic[name].reshape(-1)
                    for i in range(flat.size):
                        saved = flat[i]
                        flat[i] = saved + eps
                        plus = build_loss().item()
                        flat[i] = saved - eps
                        minus = build_loss().item()
                        flat[i] = saved
                        numeric = (plus - minus) / (2.0 * eps)
                        a = float(grad_flat[i])
                        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
                        worst = max(worst, err)
    finally:
        params.zero_grad()
        for name, t in params.items():
            t.data = originals[name]
    return worst


def make_rng(seed: int) -> np.random.Generator:
    """The repository's generator: PCG64 seeded from a 64-bit integer."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], scale: float) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(np.float32)
