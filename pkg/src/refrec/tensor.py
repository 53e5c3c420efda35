"""
tensor.py - Dense float64 tensors with reverse-mode automatic differentiation

Every activation and parameter of the segmentation network lives in a
Tensor. Operations are Function subclasses: forward works on raw numpy
arrays, backward receives the upstream gradient array and returns one
gradient array (or None) per input.

There is no general broadcasting. Binary elementwise ops require
identical shapes; the only implicit expansion is broadcast_spatial,
which tiles a vector over an H x W grid.

Gradients accumulate (+=) into leaf tensors across backward calls;
call zero_grads between optimizer steps.
"""

import logging
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class Function:
    """
    Base class for differentiable operations.

    A Function instance is the graph node that produced a tensor: it keeps
    references to its parent tensors and whatever forward context the
    backward rule needs.
    """

    tag = "function"

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError(f"forward not implemented for {self.tag}")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"backward not implemented for {self.tag}")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = any(t.requires_grad for t in tensors)
        # Nodes that no gradient can reach are not kept in the graph
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)


class Tensor:
    """
    An N-D array of 64-bit floats plus an optional autodiff graph handle.

    Attributes:
        data: row-major float64 array, never mutated by operations
        requires_grad: whether gradients flow to / through this tensor
        grad: accumulated gradient (same shape as data) or None
        creator: the Function that produced this tensor, None for leaves
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 creator: Optional[Function] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator = creator

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return div(self, other)

    # ------------------------------------------------------------------
    # Backpropagation
    # ------------------------------------------------------------------
    def backward(self):
        backward(self)


def _as_tensor(x: Union["Tensor", ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _topological_order(root: Tensor) -> List[Tensor]:
    """Post-order over the graph reachable from root (parents before children)."""
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.tensors:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """
    Reverse-mode sweep from a scalar loss.

    Leaf tensors with requires_grad accumulate into .grad; intermediate
    nodes get this pass's gradient written to .grad (overwritten, so a
    second sweep over the same graph does not double-count).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward called on a tensor that requires no grad")
        return

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.creator is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        node.grad = g
        parent_grads = node.creator.backward(g)
        for parent, pg in zip(node.creator.tensors, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise ShapeError(
                    f"{node.creator.tag}: gradient shape {pg.shape} does not match input {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors: Iterable[Tensor]):
    """Reset gradient accumulators to zeros."""
    for t in tensors:
        t.zero_grad()


# ======================================================================
# Elementwise operations
# ======================================================================
class Add(Function):
    tag = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    tag = "sub"

    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    tag = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Div(Function):
    tag = "div"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Sigmoid(Function):
    tag = "sigmoid"

    def forward(self, a):
        self.out = expit(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Tanh(Function):
    tag = "tanh"

    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Relu(Function):
    tag = "relu"

    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0.0),)


class Scale(Function):
    tag = "scale"

    def forward(self, a, factor: float = 1.0):
        self.factor = float(factor)
        return a * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class Shift(Function):
    tag = "shift"

    def forward(self, a, offset: float = 0.0):
        return a + float(offset)

    def backward(self, grad):
        return (grad,)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    return Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    return Mul.apply(a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "div")
    return Div.apply(a, b)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(_as_tensor(a))


def tanh(a: Tensor) -> Tensor:
    return Tanh.apply(_as_tensor(a))


def relu(a: Tensor) -> Tensor:
    return Relu.apply(_as_tensor(a))


def scale(a: Tensor, factor: float) -> Tensor:
    return Scale.apply(_as_tensor(a), factor=factor)


def shift(a: Tensor, offset: float) -> Tensor:
    return Shift.apply(_as_tensor(a), offset=offset)


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None, factor: float = 1.0) -> Tensor:
    """
    Dispatch an elementwise op by name.

    Args:
        op: one of add, sub, mul, div, sigmoid, tanh, relu, scale
        a: first operand
        b: second operand (binary ops only, same shape as a)
        factor: multiplier for scale
    """
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    if op == "scale":
        return scale(a, factor)
    raise ValueError(f"Unknown elementwise op: {op}")


# ======================================================================
# Spatial operations (tensors laid out as [C, H, W])
# ======================================================================
def _require_chw(t: Tensor, op: str):
    if t.data.ndim != 3:
        raise ShapeError(f"{op}: expected a [C, H, W] tensor, got shape {t.shape}")


class Conv2d(Function):
    tag = "conv2d"

    def forward(self, x, kernel, bias, stride: int = 1, padding: int = 0):
        self.stride, self.padding = stride, padding
        self.in_shape = x.shape
        kh, kw = kernel.shape[2:]
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        self.padded_shape = xp.shape
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        # [C_in, H', W', kH, kW]
        self.windows = windows[:, ::stride, ::stride]
        self.kernel = kernel
        out = np.tensordot(kernel, self.windows, axes=([1, 2, 3], [0, 3, 4]))
        return out + bias[:, None, None]

    def backward(self, grad):
        s = self.stride
        kh, kw = self.kernel.shape[2:]
        h_out, w_out = grad.shape[1:]

        grad_kernel = np.tensordot(grad, self.windows, axes=([1, 2], [1, 2]))
        grad_bias = grad.sum(axis=(1, 2))

        # [C_in, kH, kW, H', W']
        grad_windows = np.tensordot(self.kernel, grad, axes=([0], [0]))
        grad_padded = np.zeros(self.padded_shape)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, i:i + s * (h_out - 1) + 1:s, j:j + s * (w_out - 1) + 1:s] += grad_windows[:, i, j]
        p = self.padding
        grad_input = grad_padded[:, p:p + self.in_shape[1], p:p + self.in_shape[2]] if p else grad_padded
        return grad_input, grad_kernel, grad_bias


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation of a single [C_in, H, W] image.

    Output side follows H' = (H + 2*padding - kH) // stride + 1.
    """
    _require_chw(x, "conv2d")
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be [C_out, C_in, kH, kW], got {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if c_in != x.shape[0]:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in} ({x.shape} vs {kernel.shape})")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if kh > x.shape[1] + 2 * padding or kw > x.shape[2] + 2 * padding:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{x.shape[1] + 2 * padding}x{x.shape[2] + 2 * padding}"
        )
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


class Pool2d(Function):
    tag = "pool2d"

    def forward(self, x, window: int = 2, mode: str = "max"):
        c, h, w = x.shape
        k = window
        self.window, self.mode, self.in_shape = k, mode, x.shape
        # [C, H/k, W/k, k*k]
        blocks = x.reshape(c, h // k, k, w // k, k).transpose(0, 1, 3, 2, 4).reshape(c, h // k, w // k, k * k)
        if mode == "max":
            self.argmax = blocks.argmax(axis=-1)
            return np.take_along_axis(blocks, self.argmax[..., None], axis=-1)[..., 0]
        return blocks.mean(axis=-1)

    def backward(self, grad):
        c, h, w = self.in_shape
        k = self.window
        if self.mode == "max":
            blocks = np.zeros((c, h // k, w // k, k * k))
            np.put_along_axis(blocks, self.argmax[..., None], grad[..., None], axis=-1)
        else:
            blocks = np.repeat(grad[..., None] / (k * k), k * k, axis=-1)
        grad_input = blocks.reshape(c, h // k, w // k, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        return (grad_input,)


def pool2d(x: Tensor, window: int, mode: str = "max") -> Tensor:
    """Non-overlapping max or average pooling with a square window."""
    _require_chw(x, "pool2d")
    if mode not in ("max", "avg"):
        raise ValueError(f"pool2d: mode must be 'max' or 'avg', got {mode!r}")
    if window < 1:
        raise ValueError(f"pool2d: window must be >= 1, got {window}")
    if x.shape[1] % window or x.shape[2] % window:
        raise ShapeError(f"pool2d: spatial dims {x.shape[1:]} not divisible by window {window}")
    return Pool2d.apply(x, window=window, mode=mode)


class UpsampleNearest(Function):
    tag = "upsample_nearest"

    def forward(self, x, factor: int = 2):
        self.factor = factor
        return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)

    def backward(self, grad):
        c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(c, h // f, f, w // f, f).sum(axis=(2, 4)),)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    _require_chw(x, "upsample_nearest")
    if factor < 1:
        raise ValueError(f"upsample_nearest: factor must be >= 1, got {factor}")
    return UpsampleNearest.apply(x, factor=factor)


class ConcatChannels(Function):
    tag = "concat_channels"

    def forward(self, *arrays):
        self.bounds = np.cumsum([0] + [a.shape[0] for a in arrays])
        return np.concatenate(arrays, axis=0)

    def backward(self, grad):
        return tuple(grad[lo:hi] for lo, hi in zip(self.bounds[:-1], self.bounds[1:]))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    for t in tensors:
        _require_chw(t, "concat_channels")
    spatial = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != spatial:
            raise ShapeError(f"concat_channels: spatial mismatch {tensors[0].shape} vs {t.shape}")
    return ConcatChannels.apply(*tensors)


class SliceChannels(Function):
    tag = "slice_channels"

    def forward(self, x, start: int = 0, stop: int = 0):
        self.start, self.stop, self.in_shape = start, stop, x.shape
        return x[start:stop]

    def backward(self, grad):
        g = np.zeros(self.in_shape)
        g[self.start:self.stop] = grad
        return (g,)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels [start, stop) of a [C, H, W] tensor."""
    _require_chw(x, "slice_channels")
    if not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice_channels: range [{start}, {stop}) invalid for shape {x.shape}")
    return SliceChannels.apply(x, start=start, stop=stop)


class BroadcastSpatial(Function):
    tag = "broadcast_spatial"

    def forward(self, v, height: int = 1, width: int = 1):
        return np.broadcast_to(v[:, None, None], (v.shape[0], height, width)).copy()

    def backward(self, grad):
        return (grad.sum(axis=(1, 2)),)


def broadcast_spatial(v: Tensor, height: int, width: int) -> Tensor:
    """Tile a [D] vector into a [D, H, W] map; every pixel sees the whole vector."""
    if v.data.ndim != 1 or v.shape[0] < 1:
        raise ShapeError(f"broadcast_spatial: expected a non-empty vector, got shape {v.shape}")
    if height < 1 or width < 1:
        raise ValueError(f"broadcast_spatial: spatial size must be positive, got {height}x{width}")
    return BroadcastSpatial.apply(v, height=height, width=width)


class Reduce(Function):
    tag = "reduce"

    def forward(self, x, mode: str = "sum"):
        self.mode, self.in_shape = mode, x.shape
        return np.array(x.sum() if mode == "sum" else x.mean())

    def backward(self, grad):
        n = int(np.prod(self.in_shape)) if self.in_shape else 1
        value = grad if self.mode == "sum" else grad / n
        return (np.full(self.in_shape, float(value)),)


def reduce(x: Tensor, mode: str = "sum") -> Tensor:
    if mode not in ("sum", "mean"):
        raise ValueError(f"reduce: mode must be 'sum' or 'mean', got {mode!r}")
    return Reduce.apply(_as_tensor(x), mode=mode)


def stack_scalars(values: Sequence[Tensor]) -> Tensor:
    """Sum of scalar tensors, kept in the graph."""
    if not values:
        raise ValueError("stack_scalars needs at least one value")
    total = values[0]
    for v in values[1:]:
        total = add(total, v)
    return total
