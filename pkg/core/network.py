"""
Layer network with point evaluation and split evaluation around a layer index

Layers are numbered 1..L in the order they are applied. forward_to(l) yields
the feature vector after layer l (l = 0 is the input itself) and
forward_from(l, fv) resumes the computation at layer l from a feature
vector, so forward(x) == forward_from(l, forward_to(l - 1, x)) for every l.

All evaluation is batched internally; a single sample is a batch of one.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core import tensor as T
from core.errors import ConfigError, ContractError, DimensionError
from core.tensor import Tensor

logger = logging.getLogger(__name__)

DENSE = 'dense'
CONV2D = 'conv2d'
RELU = 'relu'
FLATTEN = 'flatten'
MAXPOOL2D = 'maxpool2d'

LAYER_KINDS = (DENSE, CONV2D, RELU, FLATTEN, MAXPOOL2D)
AFFINE_KINDS = (DENSE, CONV2D)

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class Layer:
    """
    One layer g(l) of a network

    Dense weights are stored [out, in]; convolution kernels [kh, kw, c, f].
    """
    kind: str
    name: str
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: str = 'valid'
    pool_size: int = 2

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ContractError(f"unknown layer kind '{self.kind}' for layer '{self.name}'")
        if self.kind in AFFINE_KINDS and (self.weight is None or self.bias is None):
            raise ContractError(f"layer '{self.name}' of kind {self.kind} needs weight and bias")
        if self.kind == DENSE and (self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],)):
            raise DimensionError(f"layer '{self.name}': weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.kind == CONV2D and (self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[3],)):
            raise DimensionError(f"layer '{self.name}': kernel {self.weight.shape} and bias {self.bias.shape} disagree")

    @classmethod
    def dense(cls, name: str, in_dim: int, out_dim: int) -> 'Layer':
        return cls(DENSE, name, Tensor(np.zeros((out_dim, in_dim))), Tensor(np.zeros(out_dim)))

    @classmethod
    def conv(cls, name: str, kh: int, kw: int, channels: int, filters: int,
             stride: int = 1, padding: str = 'valid') -> 'Layer':
        return cls(CONV2D, name, Tensor(np.zeros((kh, kw, channels, filters))), Tensor(np.zeros(filters)),
                   stride=stride, padding=padding)

    @classmethod
    def relu(cls, name: str) -> 'Layer':
        return cls(RELU, name)

    @classmethod
    def flatten(cls, name: str) -> 'Layer':
        return cls(FLATTEN, name)

    @classmethod
    def maxpool(cls, name: str, size: int = 2, stride: Optional[int] = None) -> 'Layer':
        return cls(MAXPOOL2D, name, pool_size=size, stride=stride or size)

    @property
    def has_parameters(self) -> bool:
        return self.kind in AFFINE_KINDS

    def parameters(self) -> Dict[str, Tensor]:
        if not self.has_parameters:
            return {}
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}

    def output_shape(self, input_shape: Shape) -> Shape:
        """Per-sample output shape, raising DimensionError if the input does not fit"""
        try:
            if self.kind == DENSE:
                if len(input_shape) != 1 or input_shape[0] != self.weight.shape[1]:
                    raise DimensionError(f"expects ({self.weight.shape[1]},) input, got {input_shape}")
                return (self.weight.shape[0],)
            if self.kind == CONV2D:
                kh, kw, c, f = self.weight.shape
                if len(input_shape) != 3 or input_shape[2] != c:
                    raise DimensionError(f"expects [h, w, {c}] input, got {input_shape}")
                oh, _, _ = T.conv_output_size(input_shape[0], kh, self.stride, self.padding)
                ow, _, _ = T.conv_output_size(input_shape[1], kw, self.stride, self.padding)
                return (oh, ow, f)
            if self.kind == MAXPOOL2D:
                if len(input_shape) != 3:
                    raise DimensionError(f"expects [h, w, c] input, got {input_shape}")
                oh, _, _ = T.conv_output_size(input_shape[0], self.pool_size, self.stride, 'valid')
                ow, _, _ = T.conv_output_size(input_shape[1], self.pool_size, self.stride, 'valid')
                return (oh, ow, input_shape[2])
            if self.kind == FLATTEN:
                return (int(np.prod(input_shape)),)
            return tuple(input_shape)
        except DimensionError as e:
            raise DimensionError(f"layer '{self.name}' ({self.kind}): {e}")

    def apply(self, x: Tensor) -> Tensor:
        """Evaluate the layer on a batch x[n, ...]"""
        if self.kind == DENSE:
            return T.linear(x, self.weight, self.bias)
        if self.kind == CONV2D:
            return T.add_bias(T.conv2d(x, self.weight, self.stride, self.padding), self.bias)
        if self.kind == RELU:
            return T.relu(x)
        if self.kind == FLATTEN:
            return T.reshape(x, (x.shape[0], -1))
        return T.maxpool2d(x, self.pool_size, self.stride)

    def describe(self) -> dict:
        description = {'kind': self.kind, 'name': self.name}
        if self.kind == CONV2D:
            description.update(kernel=list(self.weight.shape), stride=self.stride, padding=self.padding)
        elif self.kind == DENSE:
            description.update(in_dim=self.weight.shape[1], out_dim=self.weight.shape[0])
        elif self.kind == MAXPOOL2D:
            description.update(size=self.pool_size, stride=self.stride)
        return description

    @classmethod
    def from_description(cls, description: dict) -> 'Layer':
        kind, name = description['kind'], description['name']
        if kind == DENSE:
            return cls.dense(name, description['in_dim'], description['out_dim'])
        if kind == CONV2D:
            kh, kw, c, f = description['kernel']
            return cls.conv(name, kh, kw, c, f, description['stride'], description['padding'])
        if kind == MAXPOOL2D:
            return cls.maxpool(name, description['size'], description['stride'])
        return cls(kind, name)


@dataclass(frozen=True)
class Network:
    """Ordered layers g(1)..g(L) with a fixed per-sample input shape"""
    layers: Tuple[Layer, ...]
    input_shape: Shape
    _shapes: Tuple[Shape, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'layers', tuple(self.layers))
        object.__setattr__(self, 'input_shape', tuple(int(s) for s in self.input_shape))
        names = [layer.name for layer in self.layers]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ContractError(f"layer names must be unique, duplicated: {duplicates}")
        if not self.layers:
            raise ContractError("a network needs at least one layer")

        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        if len(shapes[-1]) != 1:
            raise DimensionError(f"network output must be a vector, last layer '{names[-1]}' yields {shapes[-1]}")
        object.__setattr__(self, '_shapes', tuple(shapes))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self._shapes[-1][0]

    def shape_at(self, l: int) -> Shape:
        """Per-sample shape of f(l); shape_at(0) is the input shape"""
        self._check_index(l, 0)
        return self._shapes[l]

    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.layers]

    def layer_index(self, name: str) -> int:
        """1-based position of the named layer"""
        for position, layer in enumerate(self.layers, start=1):
            if layer.name == name:
                return position
        raise ConfigError(f"layer '{name}' not found; available layers: {', '.join(self.layer_names())}")

    def perturbation_index(self, name: str) -> int:
        """
        Resolve a layer name to the split index used for feature perturbation

        The perturbed feature vector is the output of the named layer's
        activation when a relu follows it directly, otherwise the output of
        the named layer itself; the returned index is the first layer that
        consumes that vector.
        """
        position = self.layer_index(name)
        if position < self.depth and self.layers[position].kind == RELU:
            position += 1
        if position >= self.depth:
            raise ConfigError(f"layer '{name}' leaves no layers to propagate through")
        return position + 1

    # evaluation ---------------------------------------------------------------

    def _check_index(self, l: int, low: int):
        if not low <= l <= self.depth:
            raise ContractError(f"layer index {l} outside {low}..{self.depth}")

    def _as_batch(self, x, expected: Shape) -> Tuple[Tensor, bool]:
        x = T.as_tensor(x)
        if x.shape == expected:
            return T.reshape(x, (1,) + expected), True
        if x.shape[1:] == expected and x.ndim == len(expected) + 1:
            return x, False
        raise DimensionError(f"expected input of shape {expected} or [n, *{expected}], got {x.shape}")

    def _run(self, x: Tensor, start: int, stop: int) -> Tensor:
        for layer in self.layers[start - 1:stop]:
            x = layer.apply(x)
        return x

    def forward_range(self, x, start: int, stop: int) -> Tensor:
        """Apply layers start..stop (1-based, inclusive) to a batch or single sample"""
        batch, single = self._as_batch(x, self._shapes[start - 1])
        out = self._run(batch, start, stop)
        if single:
            out = T.reshape(out, out.shape[1:])
        return out

    def forward(self, x) -> Tensor:
        return self.forward_range(x, 1, self.depth)

    def forward_to(self, l: int, x) -> Tensor:
        self._check_index(l, 0)
        if l == 0:
            self._as_batch(x, self.input_shape)
            return T.as_tensor(x)
        return self.forward_range(x, 1, l)

    def forward_from(self, l: int, fv) -> Tensor:
        self._check_index(l, 1)
        return self.forward_range(fv, l, self.depth)

    # parameters -----------------------------------------------------------------

    def parameters(self) -> Dict[str, Tensor]:
        params = {}
        for layer in self.layers:
            params.update(layer.parameters())
        return params

    def parameter_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.parameters().items()}

    def with_parameters(self, params: Dict[str, object], requires_grad: bool = False) -> 'Network':
        """A copy of this network with parameters replaced by name"""
        layers = []
        for layer in self.layers:
            if layer.has_parameters:
                weight = params.get(f"{layer.name}.weight", layer.weight)
                bias = params.get(f"{layer.name}.bias", layer.bias)
                weight_data = weight.data if isinstance(weight, Tensor) else weight
                bias_data = bias.data if isinstance(bias, Tensor) else bias
                if np.shape(weight_data) != layer.weight.shape or np.shape(bias_data) != layer.bias.shape:
                    raise DimensionError(f"layer '{layer.name}': replacement parameters do not match "
                                         f"{layer.weight.shape} / {layer.bias.shape}")
                layer = replace(layer, weight=Tensor(weight_data, requires_grad=requires_grad),
                                bias=Tensor(bias_data, requires_grad=requires_grad))
            layers.append(layer)
        return Network(tuple(layers), self.input_shape)

    def trainable(self) -> 'Network':
        """A copy whose parameters are differentiable leaves"""
        return self.with_parameters(self.parameters(), requires_grad=True)

    def describe(self) -> dict:
        return {
            'input_shape': list(self.input_shape),
            'output_dim': self.output_dim,
            'layers': [layer.describe() for layer in self.layers],
        }

    @classmethod
    def from_description(cls, description: dict, params: Optional[Dict[str, np.ndarray]] = None) -> 'Network':
        layers = tuple(Layer.from_description(d) for d in description['layers'])
        net = cls(layers, tuple(description['input_shape']))
        if net.output_dim != description.get('output_dim', net.output_dim):
            raise DimensionError(f"described output_dim {description['output_dim']} != built {net.output_dim}")
        return net.with_parameters(params) if params else net


def sequential(input_shape: Sequence[int], layers: Iterable[Layer]) -> Network:
    return Network(tuple(layers), tuple(input_shape))


def default_architecture(input_shape: Sequence[int] = (128, 320, 1), output_dim: int = 1) -> Network:
    """
    Reference regression architecture with a 40-unit feature layer named fc40

    conv(5x5, 8, stride 2) - relu - conv(3x3, 16, stride 2) - relu - flatten
    - fc100 - relu - fc40 - relu - out(output_dim). Parameters start at zero;
    training.init_weights draws the actual initialisation.
    """
    h, w, c = input_shape
    conv1 = Layer.conv('conv1', 5, 5, c, 8, stride=2, padding='same')
    h1, w1, _ = conv1.output_shape((h, w, c))
    conv2 = Layer.conv('conv2', 3, 3, 8, 16, stride=2, padding='same')
    h2, w2, f2 = conv2.output_shape((h1, w1, 8))
    layers = (
        conv1,
        Layer.relu('relu1'),
        conv2,
        Layer.relu('relu2'),
        Layer.flatten('flatten'),
        Layer.dense('fc100', h2 * w2 * f2, 100),
        Layer.relu('relu3'),
        Layer.dense('fc40', 100, 40),
        Layer.relu('relu4'),
        Layer.dense('out', 40, output_dim),
    )
    net = Network(layers, (h, w, c))
    logger.debug(f"Built reference architecture with {net.depth} layers for input {net.input_shape}")
    return net
