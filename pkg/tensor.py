"""Dense float64 tensors with reverse-mode automatic differentiation.

Broadcasting is restricted to trailing-dimension alignment: two operand shapes
are compatible only when the shorter shape is a suffix of the longer one
(a scalar is a suffix of everything). Size-1 stretching is rejected.
"""
import logging
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    """Return the result shape of a trailing-aligned elementwise op."""
    longer, shorter = (a, b) if len(a) >= len(b) else (b, a)
    if tuple(longer[len(longer) - len(shorter):]) != tuple(shorter):
        raise ShapeError("shapes are not trailing-aligned", a, b)
    return tuple(longer)


def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out the leading dimensions a trailing-aligned op added."""
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    return grad


class Function:
    """Base class for differentiable operations.

    `forward` receives the raw arrays of the input tensors; `backward` receives
    dL/d(output) and returns one gradient array (or None) per input.
    """

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        func = cls(*tensors)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = func.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"{cls.__name__} produced non-finite values")
        requires_grad = any(t.requires_grad for t in tensors)
        return Tensor(out, creator=func if requires_grad else None, requires_grad=requires_grad)


class Tensor:
    """An immutable float64 array with an optional gradient buffer.

    Leaves created with `requires_grad=True` accumulate gradients across
    `backward` calls until `zero_grad` is called.
    """

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, creator: Optional[Function] = None,
                 name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError("tensor dimensions must be positive", array.shape)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = requires_grad
        self.creator = creator
        self.name = name
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor", self.shape)
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, values: np.ndarray) -> None:
        """Replace the values of a leaf (used by optimizers between steps)."""
        if not self.is_leaf:
            raise ConfigError("only leaf tensors can be reassigned")
        values = np.array(values, dtype=np.float64)
        if values.shape != self.shape:
            raise ShapeError("assigned values do not match tensor shape", values.shape, self.shape)
        values.flags.writeable = False
        self.data = values

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64).reshape(self.shape)
        else:
            self.grad = self.grad + grad

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ---------- operator sugar ----------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return reduce_mean(self, axis)

    def abs(self) -> "Tensor":
        return absolute(self)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


# ---------- elementwise ----------

class Add(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a, b):
        broadcast_shape(a.shape, b.shape)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, grad):
        # np.sign(0) == 0: subgradient 0 at 0
        return (grad * self.sign,)


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Gelu(Function):
    """Exact GELU: x * Phi(x)."""

    def forward(self, a):
        self.a = a
        self.cdf = 0.5 * (1.0 + erf(a / _SQRT_2))
        return a * self.cdf

    def backward(self, grad):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * self.a * self.a)
        return (grad * (self.cdf + self.a * pdf),)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad / (2.0 * self.out),)


def add(a, b) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a, b) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(as_tensor(a), as_tensor(b))


def div(a, b) -> Tensor:
    return Div.apply(as_tensor(a), as_tensor(b))


def absolute(x: Tensor) -> Tensor:
    return Abs.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def sqrt(x: Tensor) -> Tensor:
    return Sqrt.apply(x)


# ---------- linear algebra and shape ----------

class Matmul(Function):
    """Matrix product over the last two axes.

    Leading (batch) axes must match exactly, except that a 2-D right operand is
    shared across every batch entry of the left operand.
    """

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul inner dimensions disagree", a.shape, b.shape)
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise ShapeError("matmul batch dimensions disagree", a.shape, b.shape)
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.a, self.b
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            grad_b = a.reshape(-1, a.shape[-1]).T @ grad.reshape(-1, grad.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return grad_a, grad_b


class Reshape(Function):
    def forward(self, a, shape=()):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError("cannot reshape", a.shape, shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, a, axes=()):
        self.axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [arr.shape[axis] for arr in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError:
            raise ShapeError("cannot concatenate", *(arr.shape for arr in arrays))

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Select(Function):
    """Take one index along an axis, dropping that axis."""

    def forward(self, a, index=0, axis=0):
        self.in_shape, self.index, self.axis = a.shape, index, axis
        return np.take(a, index, axis=axis)

    def backward(self, grad):
        full = np.zeros(self.in_shape)
        slicer = [slice(None)] * len(self.in_shape)
        slicer[self.axis] = self.index
        full[tuple(slicer)] = grad
        return (full,)


class Pick(Function):
    """Pick one entry of the last axis per leading position: out[i] = a[i, idx[i]]."""

    def forward(self, a, indices=None):
        self.in_shape = a.shape
        self.indices = np.asarray(indices, dtype=np.int64).reshape(a.shape[:-1] + (1,))
        return np.take_along_axis(a, self.indices, axis=-1)[..., 0]

    def backward(self, grad):
        full = np.zeros(self.in_shape)
        np.put_along_axis(full, self.indices, grad[..., None], axis=-1)
        return (full,)


class Gather(Function):
    """Row lookup into an embedding table: out[...] = table[ids[...]]."""

    def forward(self, table, ids=None):
        self.table_shape = table.shape
        self.ids = np.asarray(ids, dtype=np.int64)
        return table[self.ids]

    def backward(self, grad):
        full = np.zeros(self.table_shape)
        np.add.at(full, self.ids, grad)
        return (full,)


def matmul(a, b) -> Tensor:
    return Matmul.apply(as_tensor(a), as_tensor(b))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Sequence[int] = ()) -> Tensor:
    return Transpose.apply(x, axes=tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def select(x: Tensor, index: int, axis: int = 0) -> Tensor:
    return Select.apply(x, index=index, axis=axis)


def pick(x: Tensor, indices) -> Tensor:
    return Pick.apply(x, indices=indices)


def gather(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"gather ids outside [0, {table.shape[0]})", ids.shape, table.shape)
    return Gather.apply(table, ids=ids)


# ---------- reductions ----------

class Sum(Function):
    def forward(self, a, axis=None):
        self.in_shape, self.axis = a.shape, axis
        return np.sum(a, axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, a, axis=None):
        self.in_shape, self.axis = a.shape, axis
        self.count = a.size if axis is None else a.shape[axis]
        return np.mean(a, axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


def _expand_mask(mask: np.ndarray, shape: Tuple[int, ...], axis: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != tuple(shape[: axis + 1]):
        raise ShapeError("mask must cover every dimension up to the reduced axis", mask.shape, shape)
    if np.any(mask.sum(axis=axis) == 0):
        raise ShapeError("mask has no set positions along the reduced axis", mask.shape)
    return mask.reshape(mask.shape + (1,) * (len(shape) - axis - 1))


class MaskedMean(Function):
    """Average along `axis` over positions whose mask bit is set.

    The mask covers dimensions 0..axis of the input and is broadcast over the
    trailing dimensions. The divisor is the mask count, never the axis length.
    """

    def forward(self, a, mask=None, axis=0):
        self.axis = axis
        self.mask = _expand_mask(mask, a.shape, axis)
        self.count = self.mask.sum(axis=axis, keepdims=True)
        return np.sum(a * self.mask, axis=axis) / np.squeeze(self.count, axis=axis)

    def backward(self, grad):
        return (np.expand_dims(grad, self.axis) * self.mask / self.count,)


class MaskedMax(Function):
    """Coordinate-wise max along `axis` over positions whose mask bit is set."""

    def forward(self, a, mask=None, axis=0):
        self.axis, self.in_shape = axis, a.shape
        m = np.broadcast_to(_expand_mask(mask, a.shape, axis), a.shape)
        masked = np.where(m > 0, a, -np.inf)
        self.argmax = np.expand_dims(np.argmax(masked, axis=axis), axis)
        return np.take_along_axis(a, self.argmax, axis=axis).squeeze(axis)

    def backward(self, grad):
        full = np.zeros(self.in_shape)
        np.put_along_axis(full, self.argmax, np.expand_dims(grad, self.axis), axis=self.axis)
        return (full,)


def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Sum.apply(x, axis=axis)


def reduce_mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return Mean.apply(x, axis=axis)


def masked_mean(x: Tensor, mask, axis: int = 0) -> Tensor:
    return MaskedMean.apply(x, mask=mask, axis=axis % x.ndim)


def masked_max(x: Tensor, mask, axis: int = 0) -> Tensor:
    return MaskedMax.apply(x, mask=mask, axis=axis % x.ndim)


# ---------- normalization ----------

class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps=1e-12):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        n = self.xhat.shape[-1]
        dxhat = grad * self.gamma
        dx = (self.inv_std / n) * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(grad.ndim - 1))
        return dx, (grad * self.xhat).sum(axis=lead), grad.sum(axis=lead)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < max(x.ndim, 1):
        raise ShapeError(f"softmax axis {axis} invalid", x.shape)
    return Softmax.apply(x, axis=axis)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layer_norm affine parameters must match the last dimension", x.shape, gamma.shape, beta.shape)
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; the identity outside training."""
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


# ---------- backward pass ----------

class Tape:
    """Topologically ordered record of the operations that produced a tensor.

    Every recorded tensor appears after all tensors its creator consumed, so a
    reverse traversal visits each operation exactly once with its full
    upstream gradient.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = []
        visited = set()
        # Iterative post-order DFS; input order is preserved for determinism
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node.creator is not None:
                for parent in reversed(node.creator.tensors):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def operations(self) -> List[Function]:
        return [node.creator for node in self.nodes if node.creator is not None]


def backward(loss: Tensor) -> Tape:
    """Populate `.grad` on every requires_grad leaf reachable from `loss`.

    Gradients accumulate into existing leaf buffers; reset is explicit.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError("backward needs a scalar loss", loss.shape)
    tape = Tape(loss)
    if not loss.requires_grad:
        logger.debug("backward called on a loss without differentiable inputs")
        return tape
    grads: Dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(tape.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.creator is None:
            node.accumulate_grad(grad)
            continue
        input_grads = node.creator.backward(grad)
        for parent, parent_grad in zip(node.creator.tensors, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = unbroadcast(parent_grad, parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
    return tape


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Compare analytic gradients of scalar `f` at `x` with central differences.

    Returns the max over coordinates of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    When `max_coords` is set, a seeded subset of coordinates is checked.
    """
    if not 1e-8 < eps < 1e-2:
        raise ConfigError(f"grad_check eps {eps} outside (1e-8, 1e-2)")
    if not x.is_leaf:
        raise ConfigError("grad_check needs a leaf tensor")
    requires_grad = x.requires_grad
    x.requires_grad = True
    saved_grad = x.grad
    x.zero_grad()
    base = x.data.copy()
    try:
        backward(f(x))
        analytic = x.grad if x.grad is not None else np.zeros(x.shape)
        coords = np.arange(base.size)
        if max_coords is not None and max_coords < base.size:
            coords = np.sort(np.random.default_rng(seed).choice(base.size, size=max_coords, replace=False))
        worst = 0.0
        for flat in coords:
            shifted = base.copy().reshape(-1)
            shifted[flat] += eps
            x.assign(shifted.reshape(base.shape))
            f_plus = f(x).item()
            shifted[flat] -= 2.0 * eps
            x.assign(shifted.reshape(base.shape))
            f_minus = f(x).item()
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[flat])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
        return worst
    finally:
        x.assign(base)
        x.grad = saved_grad
        x.requires_grad = requires_grad
