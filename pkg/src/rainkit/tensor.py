"""Dense NCHW tensors with tape-based reverse-mode differentiation.

Only the operations needed by the harmonization networks and their losses
are provided. Every differentiable op is a :class:`Function` subclass with a
``forward`` on raw arrays and a ``backward`` that maps the output gradient to
one gradient per parent.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

# Debug assertion: every forward output must be finite.
CHECK_FINITE = True

_grad_enabled = True
_sequence = itertools.count()


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for new tensors and parameters."""
    global DEFAULT_DTYPE
    prev = DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DEFAULT_DTYPE = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_ctx", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _float_dtype(data))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional[Function] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)


def _float_dtype(data):
    if isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(data.dtype, np.floating):
        return data.dtype
    if isinstance(data, Tensor):
        return data.dtype
    return DEFAULT_DTYPE


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """Trainable leaf tensor carrying its own Adam moment buffers."""

    __slots__ = ("name", "m", "v", "step")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(np.array(data, dtype=dtype or _float_dtype(data)), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)
        self.m = self.m.astype(dtype)
        self.v = self.v.astype(dtype)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


# --------------------------------------------------------------------------
# Function machinery
# --------------------------------------------------------------------------


class Function:
    """One recorded op. ``seq`` orders the tape; backward walks it in reverse."""

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.seq = next(_sequence)

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if CHECK_FINITE and not np.isfinite(out).all():
            raise FloatingPointError(f"{cls.__name__} produced non-finite values")
        result = Tensor(out)
        if _grad_enabled and any(t.requires_grad for t in inputs):
            result.requires_grad = True
            result._ctx = fn
        return result


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if grad is None:
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    # collect the reachable part of the tape
    nodes: dict[int, Function] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        fn = t._ctx
        if fn is None or id(fn) in nodes:
            continue
        nodes[id(fn)] = fn
        stack.extend(p for p in fn.parents if p.requires_grad)

    # keyed by producing Function so views of one op share a gradient slot
    grads: dict[int, np.ndarray] = {id(loss._ctx): grad} if loss._ctx is not None else {}
    for fn in sorted(nodes.values(), key=lambda f: f.seq, reverse=True):
        out_grad = grads.pop(id(fn), None)
        if out_grad is None:
            continue
        for parent, g in zip(fn.parents, fn.backward(out_grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent._ctx is None:
                _accumulate_leaf(parent, g)
            else:
                key = id(parent._ctx)
                grads[key] = grads[key] + g if key in grads else g
    if loss._ctx is None:
        _accumulate_leaf(loss, grad)


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match leaf shape {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype)
    else:
        t.grad += g


# --------------------------------------------------------------------------
# elementwise / broadcasting helpers
# --------------------------------------------------------------------------


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    # Only same-rank expansion of singleton axes is supported.
    if a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim:
        raise ShapeError(f"{op}: rank mismatch {a.shape} vs {b.shape}")
    for axis, (x, y) in enumerate(zip(a.shape, b.shape)):
        if x != y and x != 1 and y != 1:
            raise ShapeError(f"{op}: dimension {axis} mismatch ({x} vs {y}) in {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


class Add(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "add")
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "sub")
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        _check_broadcast(a, b, "div")
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        ga = g / self.b
        gb = -g * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Sqrt(Function):
    def forward(self, a):
        self.out = np.sqrt(a)
        return self.out

    def backward(self, g):
        return (g / (2.0 * self.out),)


class Abs(Function):
    def forward(self, a):
        self.sign = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return (g * self.sign,)


class Square(Function):
    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, g):
        return (2.0 * g * self.a,)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if not self.keepdims and self.axis is not None:
            axes = (self.axis,) if isinstance(self.axis, int) else self.axis
            g = np.expand_dims(g, tuple(a % len(self.shape) for a in axes))
        return (np.broadcast_to(g, self.shape).copy(),)


class Where(Function):
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant boolean array."""

    def forward(self, a, b, cond=None):
        _check_broadcast(a, b, "where")
        self.cond = cond
        self.shapes = (a.shape, b.shape)
        return np.where(cond, a, b)

    def backward(self, g):
        zero = np.zeros((), dtype=g.dtype)
        return (
            _unbroadcast(np.where(self.cond, g, zero), self.shapes[0]),
            _unbroadcast(np.where(self.cond, zero, g), self.shapes[1]),
        )


class Concat(Function):
    def forward(self, *arrays, axis=1):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, splits, axis=self.axis))


class Reshape(Function):
    def forward(self, a, shape=None):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


def add(a, b) -> Tensor:
    ref = a if isinstance(a, Tensor) else b
    return Add.apply(_lift(a, ref), _lift(b, ref))


def sub(a, b) -> Tensor:
    ref = a if isinstance(a, Tensor) else b
    return Sub.apply(_lift(a, ref), _lift(b, ref))


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product."""
    ref = a if isinstance(a, Tensor) else b
    return Mul.apply(_lift(a, ref), _lift(b, ref))


def div(a, b) -> Tensor:
    ref = a if isinstance(a, Tensor) else b
    return Div.apply(_lift(a, ref), _lift(b, ref))


def sqrt(a: Tensor) -> Tensor:
    return Sqrt.apply(a)


def tabs(a: Tensor) -> Tensor:
    return Abs.apply(a)


def square(a: Tensor) -> Tensor:
    return Square.apply(a)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def where(cond: np.ndarray, a, b) -> Tensor:
    ref = a if isinstance(a, Tensor) else b
    a, b = _lift(a, ref), _lift(b, ref)
    return Where.apply(a, b, cond=np.asarray(cond, dtype=bool))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels needs rank-4 inputs, got {a.shape} and {b.shape}")
    for axis, name in ((0, "batch"), (2, "height"), (3, "width")):
        if a.shape[axis] != b.shape[axis]:
            raise ShapeError(f"concat_channels: {name} mismatch ({a.shape[axis]} vs {b.shape[axis]})")
    return Concat.apply(a, b, axis=1)


def reshape(a: Tensor, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


class LeakyReLU(Function):
    def forward(self, x, slope=0.2):
        self.slope = slope
        self.pos = x > 0
        return np.where(self.pos, x, x * x.dtype.type(slope))

    def backward(self, g):
        return (np.where(self.pos, g, g * g.dtype.type(self.slope)),)


class ReLU(Function):
    def forward(self, x):
        self.pos = x > 0
        return np.where(self.pos, x, 0).astype(x.dtype, copy=False)

    def backward(self, g):
        return (np.where(self.pos, g, 0).astype(g.dtype, copy=False),)


class Sigmoid(Function):
    def forward(self, x):
        # split evaluation keeps exp from overflowing
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        out[~pos] = e / (1.0 + e)
        self.out = out
        return out

    def backward(self, g):
        return (g * self.out * (1.0 - self.out),)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, g):
        return (g * (1.0 - self.out * self.out),)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return LeakyReLU.apply(x, slope=slope)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, H, W) -> (N*Ho*Wo, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, : stride * ho : stride, : stride * wo : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back into an image."""
    n, c, h, w = shape
    ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
    cols = cols.reshape(n, ho, wo, c, k, k)
    # accumulate channel-last (contiguous inner axis), transpose once at the end
    out = np.zeros((n, h + 2 * padding, w + 2 * padding, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += cols[:, :, :, :, i, j]
    out = out[:, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _nchw_from_rows(rows: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(rows.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def _rows_from_nchw(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    return x.transpose(0, 2, 3, 1).reshape(n * h * w, c)


class Conv2d(Function):
    def forward(self, x, weight, bias=None, stride=1, padding=0):
        if x.ndim != 4:
            raise ShapeError(f"conv2d: input must be rank 4, got shape {x.shape}")
        co, ci, k, k2 = weight.shape
        if k != k2:
            raise ShapeError(f"conv2d: kernel must be square, got {k}x{k2}")
        if x.shape[1] != ci:
            raise ShapeError(f"conv2d: input channels {x.shape[1]} != weight in-channels {ci}")
        n, _, h, w = x.shape
        ho, wo = conv_output_size(h, k, stride, padding), conv_output_size(w, k, stride, padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: spatial size {h}x{w} too small for kernel {k}")
        self.meta = (x.shape, k, stride, padding, ho, wo)
        self.cols = im2col(x, k, stride, padding)
        self.wmat = weight.reshape(co, -1)
        out = self.cols @ self.wmat.T
        if bias is not None:
            out += bias.reshape(1, co)
        return _nchw_from_rows(out, n, ho, wo)

    def backward(self, g):
        shape, k, stride, padding, ho, wo = self.meta
        grows = _rows_from_nchw(g)
        gw = (grows.T @ self.cols).reshape(self.wmat.shape[0], shape[1], k, k)
        gx = col2im(grows @ self.wmat, shape, k, stride, padding)
        if len(self.parents) == 3:
            gb = g.sum(axis=(0, 2, 3)).reshape(self.parents[2].shape)
            return gx, gw, gb
        return gx, gw


class ConvTranspose2d(Function):
    """Weight layout (C_in, C_out, k, k); the adjoint of :class:`Conv2d` in its input."""

    def forward(self, x, weight, bias=None, stride=1, padding=0):
        if x.ndim != 4:
            raise ShapeError(f"conv_transpose2d: input must be rank 4, got shape {x.shape}")
        ci, co, k, k2 = weight.shape
        if k != k2:
            raise ShapeError(f"conv_transpose2d: kernel must be square, got {k}x{k2}")
        if x.shape[1] != ci:
            raise ShapeError(f"conv_transpose2d: input channels {x.shape[1]} != weight in-channels {ci}")
        n, _, h, w = x.shape
        ho = (h - 1) * stride - 2 * padding + k
        wo = (w - 1) * stride - 2 * padding + k
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv_transpose2d: output size {ho}x{wo} is empty")
        self.out_shape = (n, co, ho, wo)
        self.meta = (k, stride, padding)
        self.xrows = _rows_from_nchw(x)
        self.wmat = weight.reshape(ci, -1)
        out = col2im(self.xrows @ self.wmat, self.out_shape, k, stride, padding)
        if bias is not None:
            out += bias.reshape(1, co, 1, 1)
        return out

    def backward(self, g):
        k, stride, padding = self.meta
        n, co, ho, wo = self.out_shape
        gcols = im2col(g, k, stride, padding)
        xshape = self.parents[0].shape
        gx = _nchw_from_rows(gcols @ self.wmat.T, n, xshape[2], xshape[3])
        gw = (self.xrows.T @ gcols).reshape(self.parents[1].shape)
        if len(self.parents) == 3:
            gb = g.sum(axis=(0, 2, 3)).reshape(self.parents[2].shape)
            return gx, gw, gb
        return gx, gw


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    args = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*args, stride=stride, padding=padding)


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    args = (x, weight) if bias is None else (x, weight, bias)
    return ConvTranspose2d.apply(*args, stride=stride, padding=padding)


# --------------------------------------------------------------------------
# resizing
# --------------------------------------------------------------------------


def nearest_indices(src: int, dst: int) -> np.ndarray:
    return np.minimum((np.arange(dst) * src) // dst, src - 1)


class ResizeNearest(Function):
    def forward(self, x, size=None):
        h, w = size
        self.rows = nearest_indices(x.shape[2], h)
        self.cols = nearest_indices(x.shape[3], w)
        self.in_shape = x.shape
        return x[:, :, self.rows][:, :, :, self.cols]

    def backward(self, g):
        out = np.zeros(self.in_shape, dtype=g.dtype)
        tmp = np.zeros(self.in_shape[:2] + (self.in_shape[2], g.shape[3]), dtype=g.dtype)
        np.add.at(tmp, (slice(None), slice(None), self.rows), g)
        np.add.at(out, (slice(None), slice(None), slice(None), self.cols), tmp)
        return (out,)


def resize_nearest(x: Tensor, height: int, width: int) -> Tensor:
    if height < 1 or width < 1:
        raise ShapeError(f"resize_nearest: target size must be positive, got {height}x{width}")
    if x.shape[2:] == (height, width):
        return x
    return ResizeNearest.apply(x, size=(height, width))


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of a (N, 1, H, W) mask, re-binarized at 0.5."""
    rows = nearest_indices(mask.shape[2], height)
    cols = nearest_indices(mask.shape[3], width)
    out = mask[:, :, rows][:, :, :, cols]
    return (out >= 0.5).astype(mask.dtype)


# --------------------------------------------------------------------------
# modules and optimisation
# --------------------------------------------------------------------------


class Module:
    """Minimal container: parameters and buffers are discovered by attribute walk."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffer_names", ()):
            yield prefix + name, getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def set_buffer(self, qualified: str, value: np.ndarray) -> None:
        obj = self
        *path, leaf = qualified.split(".")
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        current = getattr(obj, leaf)
        if current.shape != value.shape:
            raise ShapeError(f"buffer {qualified}: shape {value.shape} != {current.shape}")
        setattr(obj, leaf, value.astype(current.dtype))

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.astype(dtype)
        for m in self.modules():
            for name in getattr(m, "_buffer_names", ()):
                setattr(m, name, getattr(m, name).astype(dtype))
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def adam_step(
    params: Iterable[Parameter],
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
    zero_grad: bool = True,
) -> None:
    """One bias-corrected Adam update, in place. Gradients are cleared afterwards."""
    for p in params:
        g = p.grad
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1**p.step)
        v_hat = p.v / (1.0 - beta2**p.step)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        if zero_grad:
            p.zero_grad()


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
