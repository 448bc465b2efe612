"""
Dense Tensor values and the differentiable primitive set

A Tensor wraps an immutable, C-contiguous float64 numpy array. Every
primitive records its parents and a backward rule when at least one operand
requires a gradient; core.autodiff walks those records in reverse.

Shapes are checked at every primitive. The only broadcast allowed is
scalar-with-tensor (a Python number or a 0-d Tensor); the trailing-dimension
bias of a batched affine layer goes through the explicit add_bias primitive.
"""

import itertools
import logging
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

_node_counter = itertools.count()

Number = Union[int, float]


class Tensor:
    """
    Immutable dense array with optional gradient tracking

    Args:
        data: array-like numeric content (copied and frozen as float64)
        requires_grad: mark this tensor as a differentiable leaf
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False,
                 _parents: Tuple['Tensor', ...] = (),
                 _backward: Optional[Callable] = None,
                 _op: str = '', _copy: bool = True):
        if _copy:
            array = np.array(data, dtype=np.float64, order='C', copy=True)
        else:
            array = np.asarray(data, dtype=np.float64)
            if not array.flags.c_contiguous:
                array = np.ascontiguousarray(array)
        array.setflags(write=False)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._op = _op
        # recording order; parents always carry a smaller index than children
        self._index = next(_node_counter)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values"""
        return np.array(self.data, copy=True)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_flag}, op='{self._op}')"

    def __len__(self):
        if self.ndim == 0:
            raise TypeError("len() of a 0-d tensor")
        return self.shape[0]

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ContractError("division is only defined by a Python scalar")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    """Wrap a number or array as a constant Tensor; Tensors pass through"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, _op=op, _copy=False)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op, _copy=False)


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shape mismatch between {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Undo a scalar broadcast in the backward pass"""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


# elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, 'add')

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, 'add')


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, 'sub')

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, 'sub')


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, 'mul')

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, 'mul')


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), 'neg')


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to the second operand"""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, 'maximum')
    pick_a = a.data > b.data

    def backward(g):
        return _reduce_to(np.where(pick_a, g, 0.0), a.shape), _reduce_to(np.where(pick_a, 0.0, g), b.shape)

    return _make(np.maximum(a.data, b.data), (a, b), backward, 'maximum')


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to the second operand"""
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, 'minimum')
    pick_a = a.data < b.data

    def backward(g):
        return _reduce_to(np.where(pick_a, g, 0.0), a.shape), _reduce_to(np.where(pick_a, 0.0, g), b.shape)

    return _make(np.minimum(a.data, b.data), (a, b), backward, 'minimum')


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), 'abs')


def relu(a) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0

    return _make(np.where(active, a.data, 0.0), (a,), lambda g: (np.where(active, g, 0.0),), 'relu')


def clip_nonneg(a) -> Tensor:
    """x if x >= 0 else 0, with subgradient 0 at the kink"""
    a = as_tensor(a)
    active = a.data > 0

    return _make(np.where(a.data >= 0, a.data, 0.0), (a,), lambda g: (np.where(active, g, 0.0),), 'clip_nonneg')


def clip(a, lower: float, upper: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data > lower) & (a.data < upper)

    return _make(np.clip(a.data, lower, upper), (a,), lambda g: (np.where(inside, g, 0.0),), 'clip')


def sign(a) -> Tensor:
    """Elementwise sign with sign(0) = 0; constant for differentiation"""
    return Tensor(np.sign(as_tensor(a).data))


# reductions and reshaping --------------------------------------------------

def _check_axis(a: Tensor, axis: Optional[int], op: str):
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {a.shape}")


def reduce_sum(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis, 'reduce_sum')

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), backward, 'reduce_sum')


def reduce_mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis, 'reduce_mean')
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ContractError("reduce_mean over an empty axis")

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy(),)

    return _make(a.data.mean(axis=axis), (a,), backward, 'reduce_mean')


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {a.shape} as {shape}")

    return _make(data, (a,), lambda g: (g.reshape(a.shape),), 'reshape')


# linear maps ----------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of a[m x k] and b[k x n]"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), backward, 'matmul')


def linear(x, weight, bias=None) -> Tensor:
    """
    Batched affine map x[n x in] -> x . weight^T + bias, weight stored [out x in]

    Equivalent to add_bias(matmul(x, weight^T), bias) as a single primitive.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward, 'linear')


def add_bias(x, bias) -> Tensor:
    """Add a bias vector along the trailing dimension of x"""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.ndim != 1 or x.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not match trailing dimension of {x.shape}")

    def backward(g):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0)

    return _make(x.data + bias.data, (x, bias), backward, 'add_bias')


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> Tuple[int, int, int]:
    """
    Output length and (before, after) padding along one spatial axis

    valid: out = (size - kernel) // stride + 1, no padding
    same:  out = ceil(size / stride), total padding (out - 1) * stride + kernel - size
           split with the smaller half before
    """
    if stride < 1:
        raise ContractError(f"stride must be a positive integer, got {stride}")
    if padding == 'valid':
        if kernel > size:
            raise DimensionError(f"kernel extent {kernel} exceeds input extent {size}")
        return (size - kernel) // stride + 1, 0, 0
    if padding == 'same':
        out = -(-size // stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    raise ContractError(f"unknown padding mode '{padding}' (expected 'valid' or 'same')")


def _windows(padded: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """View padded[N,H,W,C] as [N, oh, ow, C, kh, kw] strided windows"""
    view = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    return view[:, ::stride, ::stride][:, :oh, :ow]


def _as_batch(x: Tensor, rank: int, op: str) -> Tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x.data[np.newaxis], True
    if x.ndim == rank + 1:
        return x.data, False
    raise DimensionError(f"{op}: expected rank {rank} or {rank + 1} input, got shape {x.shape}")


def conv2d(x, kernel, stride: int = 1, padding: str = 'valid') -> Tensor:
    """
    2-D cross-correlation

    Args:
        x: input [h, w, c] or batched [n, h, w, c]
        kernel: filters [kh, kw, c, f]
        stride: positive step in both spatial directions
        padding: 'valid' (no padding) or 'same' (output ceil(h / stride))

    Returns:
        [h', w', f] (or [n, h', w', f]) with h', w' from conv_output_size
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    data, single = _as_batch(x, 3, 'conv2d')
    if kernel.ndim != 4 or kernel.shape[2] != data.shape[3]:
        raise DimensionError(f"conv2d: kernel {kernel.shape} does not match input {x.shape}")
    n, h, w, c = data.shape
    kh, kw, _, f = kernel.shape
    oh, pad_top, pad_bottom = conv_output_size(h, kh, stride, padding)
    ow, pad_left, pad_right = conv_output_size(w, kw, stride, padding)

    padded = np.pad(data, ((0, 0), (pad_top, pad_bottom), (pad_left, pad_right), (0, 0)))
    windows = _windows(padded, kh, kw, stride, oh, ow)
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * c)
    kmat = kernel.data.reshape(kh * kw * c, f)
    out = (cols @ kmat).reshape(n, oh, ow, f)

    def backward(g):
        g2 = g.reshape(n * oh * ow, f)
        grad_kernel = (cols.T @ g2).reshape(kernel.shape)
        dcols = (g2 @ kmat.T).reshape(n, oh, ow, kh, kw, c)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += dcols[:, :, :, i, j, :]
        grad_x = grad_padded[:, pad_top:pad_top + h, pad_left:pad_left + w, :]
        if single:
            grad_x = grad_x[0]
        return np.ascontiguousarray(grad_x), grad_kernel

    return _make(out[0] if single else out, (x, kernel), backward, 'conv2d')


def maxpool2d(x, size: int = 2, stride: Optional[int] = None) -> Tensor:
    """Max over size x size windows ('valid' padding); ties go to the first window element"""
    x = as_tensor(x)
    stride = stride or size
    data, single = _as_batch(x, 3, 'maxpool2d')
    n, h, w, c = data.shape
    oh, _, _ = conv_output_size(h, size, stride, 'valid')
    ow, _, _ = conv_output_size(w, size, stride, 'valid')

    windows = _windows(data, size, size, stride, oh, ow).reshape(n, oh, ow, c, size * size)
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., np.newaxis], axis=-1)[..., 0]

    def backward(g):
        g_batch = g[np.newaxis] if single else g
        grad_x = np.zeros_like(data)
        for idx in range(size * size):
            i, j = divmod(idx, size)
            grad_x[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += np.where(arg == idx, g_batch, 0.0)
        return (grad_x[0] if single else grad_x,)

    return _make(out[0] if single else out, (x,), backward, 'maxpool2d')
