"""Dense float64 tensors with reverse-mode differentiation.

Operations record themselves on the active ComputationTape when any input
requires a gradient. Replaying the tape backwards visits every recorded
node exactly once in reverse topological order.

    with ComputationTape() as tape:
        loss = cross_entropy(model_logits, targets)
    tape.backward(loss)
"""

import contextvars
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import NonScalarOutput, ShapeMismatch, TargetOutOfRange


ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

LAYER_NORM_EPS = 1e-5
_GELU_K = math.sqrt(2.0 / math.pi)

_active_tape: "contextvars.ContextVar[Optional[ComputationTape]]" = contextvars.ContextVar(
    "vulnscore_active_tape", default=None
)


class Tensor:
    """A float64 array that may carry a gradient buffer."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._requires_grad = False
        self._is_leaf = True
        self.requires_grad = requires_grad

    @property
    def requires_grad(self) -> bool:
        return self._requires_grad

    @requires_grad.setter
    def requires_grad(self, value: bool) -> None:
        self._requires_grad = bool(value)
        if self._requires_grad and self.grad is None:
            self.grad = np.zeros_like(self.data)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, _as_tensor(other))

    def __radd__(self, other: "Tensor") -> "Tensor":
        return add(_as_tensor(other), self)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, other: "Tensor") -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: object) -> "Tensor":
        return slice_(self, index)


def _as_tensor(value: object) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("output", "inputs", "backward_fn", "op")

    def __init__(self, op: str, output: Tensor, inputs: Sequence[Tensor], backward_fn: BackwardFn):
        self.op = op
        self.output = output
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn


class ComputationTape:
    """Ordered record of the operations of one forward pass.

    A tape belongs to the thread (or context) that entered it; independent
    tapes can run side by side.
    """

    def __init__(self) -> None:
        self.nodes: List[_Node] = []
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "ComputationTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def backward(self, output: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> None:
        backward(self, output, wrt)


def backward(tape: ComputationTape, output: Tensor, wrt: Optional[Sequence[Tensor]] = None) -> None:
    """Accumulate d(output)/d(leaf) into the grad buffer of every tracked leaf.

    When wrt is given, only those leaves receive gradients; other grad
    buffers are left untouched.
    """
    if output.data.size != 1:
        raise NonScalarOutput(output.shape)
    if not output.requires_grad:
        return
    targets = None if wrt is None else {id(t) for t in wrt}
    grads = {id(output): np.ones_like(output.data)}
    if output._is_leaf:
        if targets is None or id(output) in targets:
            output.grad += grads[id(output)]
        return
    for node in reversed(tape.nodes):
        grad_out = grads.pop(id(node.output), None)
        if grad_out is None:
            continue
        for inp, grad_in in zip(node.inputs, node.backward_fn(grad_out)):
            if grad_in is None or not inp.requires_grad:
                continue
            if inp._is_leaf:
                if targets is None or id(inp) in targets:
                    inp.grad += grad_in
            else:
                key = id(inp)
                grads[key] = grads[key] + grad_in if key in grads else grad_in


def _record(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out._requires_grad = False
    out._is_leaf = True
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out._requires_grad = True
        out._is_leaf = False
        tape.record(_Node(op, out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# Forward operations

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    return _record(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    return _record(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _record("scale", a.data * factor, (a,), lambda g: (g * factor,))


def sum_all(a: Tensor) -> Tensor:
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch("matmul", a.shape, b.shape) from None

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", data, (a, b), grad_fn)


def relu(a: Tensor) -> Tensor:
    return _record("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_K * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        d_inner = _GELU_K * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return _record("gelu", data, (a,), grad_fn)


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    p = softmax_array(a.data, axis)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record("softmax", p, (a,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeMismatch("layer_norm", x.shape, gamma.shape, beta.shape)
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gamma.data + beta.data

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dxhat = g * gamma.data
        dx = inv_std / width * (
            width * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return _record("layer_norm", data, (x, gamma, beta), grad_fn)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of a (vocab, width) table gathered by an integer id array."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeMismatch("embedding_lookup", table.shape, ids.shape)

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _record("embedding_lookup", table.data[ids], (table,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    shapes = [t.shape for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *shapes) from None
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g: np.ndarray) -> List[np.ndarray]:
        return [np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return _record("concat", data, tuple(tensors), grad_fn)


def slice_(a: Tensor, index: object) -> Tensor:
    try:
        data = a.data[index]
    except IndexError:
        raise ShapeMismatch("slice", a.shape) from None

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _record("slice", np.array(data), (a,), grad_fn)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", a.shape, shape) from None
    return _record("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _record("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; the identity when rate is 0 or no rng is given."""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _record("dropout", a.data * keep, (a,), lambda g: (g * keep,))


def log_softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: Union[int, Sequence[int], np.ndarray]) -> Tensor:
    """Mean negative log-likelihood of the targets under softmax(logits)."""
    data = logits.data if logits.ndim == 2 else logits.data.reshape(1, -1)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    batch, num_classes = data.shape
    if targets.shape != (batch,):
        raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
    for t in targets:
        if not 0 <= t < num_classes:
            raise TargetOutOfRange(int(t), num_classes)
    log_p = log_softmax_array(data)
    rows = np.arange(batch)
    loss = -log_p[rows, targets].mean()

    def grad_fn(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(log_p)
        grad[rows, targets] -= 1.0
        return ((grad * (g / batch)).reshape(logits.shape),)

    return _record("cross_entropy", np.array(loss), (logits,), grad_fn)
