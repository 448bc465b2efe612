"""
Boxed-domain bound propagation under (layer, kappa) feature perturbation

The prefix of the network (layers 1..l-1) runs in point arithmetic, the
feature vector is widened by kappa in every dimension, and the box is pushed
through layers l..L. Every step is built from differentiable primitives, so
bounds carry gradients with respect to all network parameters.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.errors import ContractError, DimensionError
from core.network import CONV2D, DENSE, FLATTEN, MAXPOOL2D, RELU, Layer, Network
from core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntervalTensor:
    """Elementwise [lower, upper] box over a tensor shape"""
    lower: Tensor
    upper: Tensor

    def __post_init__(self):
        object.__setattr__(self, 'lower', T.as_tensor(self.lower))
        object.__setattr__(self, 'upper', T.as_tensor(self.upper))
        if self.lower.shape != self.upper.shape:
            raise DimensionError(f"interval bounds differ in shape: {self.lower.shape} vs {self.upper.shape}")
        if np.any(self.lower.data > self.upper.data):
            raise ContractError("interval lower bound exceeds upper bound")

    @classmethod
    def point(cls, x) -> 'IntervalTensor':
        x = T.as_tensor(x)
        return cls(x, x)

    @property
    def shape(self):
        return self.lower.shape

    def width(self) -> np.ndarray:
        return self.upper.data - self.lower.data

    def contains(self, values, slack: float = 0.0) -> np.ndarray:
        """Elementwise membership of values (same shape) in the box"""
        values = np.asarray(values.data if isinstance(values, Tensor) else values)
        return (values >= self.lower.data - slack) & (values <= self.upper.data + slack)

    def contains_box(self, other: 'IntervalTensor') -> bool:
        return bool(np.all(self.lower.data <= other.lower.data) and np.all(other.upper.data <= self.upper.data))

    def map(self, fn) -> 'IntervalTensor':
        """Apply a monotone nondecreasing function to both endpoints"""
        return IntervalTensor(fn(self.lower), fn(self.upper))


@dataclass(frozen=True)
class RobustSpec:
    """
    Parameters of the provable-robustness criterion

    delta: nonnegative output tolerances, one per output dimension (a single
        value applies to every dimension)
    layer_index: first layer that consumes the perturbed feature vector, 1..L
    kappa: nonnegative perturbation radius at that feature vector
    """
    delta: tuple
    layer_index: int
    kappa: float

    def __post_init__(self):
        delta = tuple(float(d) for d in np.atleast_1d(np.asarray(self.delta, dtype=np.float64)))
        object.__setattr__(self, 'delta', delta)
        object.__setattr__(self, 'kappa', float(self.kappa))
        object.__setattr__(self, 'layer_index', int(self.layer_index))
        if not delta or any(d < 0 or not np.isfinite(d) for d in delta):
            raise ContractError(f"tolerances must be finite and nonnegative, got {delta}")
        if self.kappa < 0 or not np.isfinite(self.kappa):
            raise ContractError(f"kappa must be finite and nonnegative, got {self.kappa}")
        if self.layer_index < 1:
            raise ContractError(f"layer index must be at least 1, got {self.layer_index}")

    def delta_vector(self, output_dim: int) -> np.ndarray:
        if len(self.delta) == 1:
            return np.full(output_dim, self.delta[0])
        if len(self.delta) != output_dim:
            raise DimensionError(f"{len(self.delta)} tolerances for {output_dim} outputs")
        return np.array(self.delta)

    def check(self, net: Network) -> 'RobustSpec':
        if self.layer_index > net.depth:
            raise ContractError(f"layer index {self.layer_index} exceeds network depth {net.depth}")
        self.delta_vector(net.output_dim)
        return self

    def with_kappa(self, kappa: float) -> 'RobustSpec':
        return RobustSpec(self.delta, self.layer_index, kappa)


def widen(fv, kappa: float) -> IntervalTensor:
    """The box [fv - kappa, fv + kappa]"""
    if kappa < 0:
        raise ContractError(f"kappa must be nonnegative, got {kappa}")
    fv = T.as_tensor(fv)
    if kappa == 0:
        return IntervalTensor(fv, fv)
    return IntervalTensor(T.sub(fv, kappa), T.add(fv, kappa))


def _center_radius(box: IntervalTensor) -> Tuple[Tensor, Tensor]:
    mid = T.mul(T.add(box.lower, box.upper), 0.5)
    rad = T.mul(T.sub(box.upper, box.lower), 0.5)
    return mid, rad


def _from_center_radius(mid: Tensor, rad: Tensor) -> IntervalTensor:
    return IntervalTensor(T.sub(mid, rad), T.add(mid, rad))


def _batched(box: IntervalTensor, rank: int) -> Tuple[IntervalTensor, bool]:
    if box.lower.ndim == rank:
        shape = (1,) + box.shape
        return IntervalTensor(T.reshape(box.lower, shape), T.reshape(box.upper, shape)), True
    return box, False


def _unbatched(box: IntervalTensor, single: bool) -> IntervalTensor:
    if not single:
        return box
    shape = box.shape[1:]
    return IntervalTensor(T.reshape(box.lower, shape), T.reshape(box.upper, shape))


def propagate_dense(box: IntervalTensor, weight, bias) -> IntervalTensor:
    """
    Affine transformer W x + b over a box (weight stored [out, in])

    Realised in center-radius form, mid' = W mid + b and rad' = |W| rad,
    which equals [W+ lower + W- upper + b, W+ upper + W- lower + b].
    """
    weight = T.as_tensor(weight)
    batch, single = _batched(box, 1)
    mid, rad = _center_radius(batch)
    out_mid = T.linear(mid, weight, bias)
    out_rad = T.linear(rad, T.absolute(weight))
    return _unbatched(_from_center_radius(out_mid, out_rad), single)


def propagate_dense_chain(box: IntervalTensor, layers: Sequence[Layer]) -> List[IntervalTensor]:
    """
    Boxes after each layer of a run of consecutive dense layers

    Centers follow the layers one at a time, as the point forward pass does;
    radii use the accumulated product W_k ... W_1 against the radius of the
    entry box, so every returned box is the exact hull of the entry box's image.
    """
    batch, single = _batched(box, 1)
    mid, rad = _center_radius(batch)
    product = None
    boxes = []
    for layer in layers:
        if layer.kind != DENSE:
            raise ContractError(f"layer '{layer.name}' ({layer.kind}) is not dense")
        product = layer.weight if product is None else T.matmul(layer.weight, product)
        mid = T.linear(mid, layer.weight, layer.bias)
        boxes.append(_unbatched(_from_center_radius(mid, T.linear(rad, T.absolute(product))), single))
    return boxes


def propagate_conv(box: IntervalTensor, kernel, stride: int = 1, padding: str = 'valid',
                   bias=None) -> IntervalTensor:
    """Convolution transformer, same center-radius rule as propagate_dense"""
    kernel = T.as_tensor(kernel)
    batch, single = _batched(box, 3)
    mid, rad = _center_radius(batch)
    out_mid = T.conv2d(mid, kernel, stride, padding)
    if bias is not None:
        out_mid = T.add_bias(out_mid, bias)
    out_rad = T.conv2d(rad, T.absolute(kernel), stride, padding)
    return _unbatched(_from_center_radius(out_mid, out_rad), single)


def propagate_monotone(box: IntervalTensor, kind: str, pool_size: int = 2,
                       stride: Optional[int] = None) -> IntervalTensor:
    """relu or maxpool2d applied to each endpoint independently"""
    if kind == RELU:
        return box.map(T.relu)
    if kind == MAXPOOL2D:
        return box.map(lambda x: T.maxpool2d(x, pool_size, stride))
    raise ContractError(f"'{kind}' is not a monotone layer kind")


def propagate_layer(layer: Layer, box: IntervalTensor) -> IntervalTensor:
    """Push a batched box [n, ...] through one layer"""
    if layer.kind == DENSE:
        return propagate_dense(box, layer.weight, layer.bias)
    if layer.kind == CONV2D:
        return propagate_conv(box, layer.weight, layer.stride, layer.padding, layer.bias)
    if layer.kind == FLATTEN:
        return box.map(lambda x: T.reshape(x, (x.shape[0], -1)))
    return propagate_monotone(box, layer.kind, layer.pool_size, layer.stride)


def propagate(net: Network, box: IntervalTensor, start: int,
              trace: Optional[List[IntervalTensor]] = None) -> IntervalTensor:
    """
    Push a box over f(start - 1) through layers start..L

    Accepts a single-sample box or a batch; appends each intermediate box to
    trace when one is given.
    """
    expected = net.shape_at(start - 1)
    if box.shape == expected:
        box = IntervalTensor(T.reshape(box.lower, (1,) + expected), T.reshape(box.upper, (1,) + expected))
        single = True
    elif box.shape[1:] == expected:
        single = False
    else:
        raise DimensionError(f"box of shape {box.shape} does not fit layer {start} input {expected}")

    layers = net.layers[start - 1:]
    i = 0
    while i < len(layers):
        end = i + 1
        while layers[i].kind == DENSE and end < len(layers) and layers[end].kind == DENSE:
            end += 1
        # consecutive dense layers are propagated as one affine map
        boxes = propagate_dense_chain(box, layers[i:end]) if end - i > 1 else [propagate_layer(layers[i], box)]
        box = boxes[-1]
        if trace is not None:
            trace.extend(boxes)
        i = end

    if single:
        box = _unbatched(box, True)
    return box


def output_bounds(net: Network, x, spec: RobustSpec,
                  trace: Optional[List[IntervalTensor]] = None) -> IntervalTensor:
    """
    Output box [L, U] of the network under (spec.layer_index, spec.kappa) perturbation

    x may be one sample (returns [d_L] bounds) or a batch (returns [n, d_L]).
    """
    spec.check(net)
    fv = net.forward_to(spec.layer_index - 1, x)
    box = widen(fv, spec.kappa)
    bounds = propagate(net, box, spec.layer_index, trace)
    logger.debug(f"Propagated box from layer {spec.layer_index} with kappa={spec.kappa}: "
                 f"max width {float(bounds.width().max()):.6g}")
    return bounds


def sample_box(box: IntervalTensor, count: int, rng: np.random.Generator) -> np.ndarray:
    """count uniform points of a single-sample box, shape [count, *box.shape]"""
    lower, upper = box.lower.data, box.upper.data
    u = rng.random((count,) + box.shape)
    return lower + u * (upper - lower)


def sample_corners(box: IntervalTensor) -> np.ndarray:
    """All 2^d corners of a flat single-sample box, shape [2^d, d]"""
    if box.lower.ndim != 1:
        raise DimensionError(f"corner enumeration needs a flat box, got {box.shape}")
    d = box.shape[0]
    bits = (np.arange(2 ** d)[:, None] >> np.arange(d)[None, :]) & 1
    return np.where(bits == 1, box.upper.data[None, :], box.lower.data[None, :])
