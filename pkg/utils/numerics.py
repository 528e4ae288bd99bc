"""Dense float64 matrices with a small reverse-mode tape.

Only the operations the graph autoencoder and its tests need are recorded:
matmul, add (with row/scalar broadcasting), relu, identity, row indexing,
sum and mean squared error.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class Tensor:
    """A 2-D float64 matrix that may take part in the differentiation tape."""

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Sequence[Tuple["Tensor", Callable[[np.ndarray], np.ndarray]]] = ()):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(-1, 1)
        elif value.ndim != 2:
            raise InvalidArgumentError(f"matrices are 2-D, got shape {value.shape}")
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(_parents)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)


def constant(value, name: Optional[str] = None) -> Tensor:
    tensor = Tensor(value, requires_grad=False, name=name)
    if not np.all(np.isfinite(tensor.value)):
        raise InvalidArgumentError(f"non-finite entries in {name or 'matrix'}")
    return tensor


def parameter(value, name: Optional[str] = None) -> Tensor:
    tensor = Tensor(value, requires_grad=True, name=name)
    if not np.all(np.isfinite(tensor.value)):
        raise InvalidArgumentError(f"non-finite entries in parameter {name!r}")
    return tensor


def identity(k: int) -> Tensor:
    return constant(np.eye(k))


def _record(value: np.ndarray, parents) -> Tensor:
    tracked = [(p, fn) for p, fn in parents if p.requires_grad]
    return Tensor(value, requires_grad=bool(tracked), _parents=tracked)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise InvalidArgumentError(f"cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _record(av @ bv, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1x1 or 1xk operand is broadcast over rows."""
    try:
        out = a.value + b.value
    except ValueError as e:
        raise InvalidArgumentError(f"cannot add {a.shape} and {b.shape}") from e
    if out.shape not in (a.shape, b.shape):
        raise InvalidArgumentError(f"cannot add {a.shape} and {b.shape}")
    a_shape, b_shape = a.shape, b.shape
    return _record(out, [
        (a, lambda g: _unbroadcast(g, a_shape)),
        (b, lambda g: _unbroadcast(g, b_shape)),
    ])


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def linear(a: Tensor) -> Tensor:
    return _record(a.value.copy(), [(a, lambda g: g)])


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "identity": linear,
}


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    rows, shape = a.rows, a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return out

    if index.size and (index.min() < 0 or index.max() >= rows):
        raise InvalidArgumentError("row index out of range")
    return _record(a.value[index], [(a, vjp)])


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.array([[a.value.sum()]]), [(a, lambda g: np.full(shape, g[0, 0]))])


def mse_loss(prediction: Tensor, target: Tensor) -> Tensor:
    if prediction.shape != target.shape:
        raise InvalidArgumentError(
            f"prediction {prediction.shape} and target {target.shape} differ")
    diff = prediction.value - target.value
    scale = 2.0 / diff.size
    return _record(np.array([[np.mean(diff ** 2)]]), [
        (prediction, lambda g: g[0, 0] * scale * diff),
        (target, lambda g: -g[0, 0] * scale * diff),
    ])


def _topological_order(root: Tensor) -> List[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into ``.grad`` of every tracked leaf."""
    if loss.shape != (1, 1):
        raise InvalidArgumentError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in node._parents:
            contribution = vjp(g)
            key = id(parent)
            grads[key] = contribution if key not in grads else grads[key] + contribution


@dataclass
class ParameterSet:
    """Named trainable matrices with Adam moment buffers."""
    params: Dict[str, Tensor] = field(default_factory=dict)
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> Tensor:
        tensor = parameter(value, name=name)
        self.params[name] = tensor
        self.first_moment[name] = np.zeros(tensor.shape)
        self.second_moment[name] = np.zeros(tensor.shape)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def gradients(self) -> Dict[str, np.ndarray]:
        return {name: (t.grad if t.grad is not None else np.zeros(t.shape))
                for name, t in self.params.items()}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def values(self) -> Dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t in self.params.items()}


def adam_step(params: ParameterSet, lr: float, beta1: float = ADAM_BETA1,
              beta2: float = ADAM_BETA2, eps: float = ADAM_EPSILON) -> ParameterSet:
    params.step_count += 1
    t = params.step_count
    for name, tensor in params.items():
        g = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        m = params.first_moment[name] = beta1 * params.first_moment[name] + (1 - beta1) * g
        v = params.second_moment[name] = beta2 * params.second_moment[name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        tensor.value = tensor.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()
    return params


def sgd_step(params: ParameterSet, lr: float) -> ParameterSet:
    params.step_count += 1
    for tensor in params.params.values():
        if tensor.grad is not None:
            tensor.value = tensor.value - lr * tensor.grad
    params.zero_grad()
    return params


OPTIMIZERS = {
    "adam": adam_step,
    "sgd": sgd_step,
}


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"shape must be positive, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def finite_difference_gradients(loss_fn: Callable[[], Tensor], params: ParameterSet,
                                step: float = 1e-5) -> Dict[str, np.ndarray]:
    """Central differences of ``loss_fn`` with respect to every parameter entry."""
    numeric = {}
    for name, tensor in params.items():
        grad = np.zeros(tensor.shape)
        for idx in np.ndindex(*tensor.shape):
            original = tensor.value[idx]
            tensor.value[idx] = original + step
            upper = loss_fn().value[0, 0]
            tensor.value[idx] = original - step
            lower = loss_fn().value[0, 0]
            tensor.value[idx] = original
            grad[idx] = (upper - lower) / (2 * step)
        numeric[name] = grad
    return numeric
