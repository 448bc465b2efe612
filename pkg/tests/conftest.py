import logging

import numpy as np
import pytest

from core.network import Layer, Network, sequential
from models import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dense_net(rng, sizes=(4, 6, 5, 1), scale=1.0) -> Network:
    """dense - relu - ... - dense with normal weights"""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:]), start=1):
        layers.append(Layer.dense(f"fc{i}", n_in, n_out))
        if i < len(sizes) - 1:
            layers.append(Layer.relu(f"relu{i}"))
    net = sequential((sizes[0],), layers)
    params = {name: rng.normal(0.0, scale, size=value.shape) for name, value in net.parameter_arrays().items()}
    return net.with_parameters(params)


def random_conv_net(rng, input_shape=(8, 8, 1)) -> Network:
    """conv(same, stride 2) - relu - maxpool - flatten - dense - relu - dense"""
    h, w, c = input_shape
    layers = [
        Layer.conv('conv1', 3, 3, c, 2, stride=2, padding='same'),
        Layer.relu('relu1'),
        Layer.maxpool('pool1', 2),
        Layer.flatten('flatten'),
    ]
    flat = (-(-h // 2) // 2) * (-(-w // 2) // 2) * 2
    layers += [Layer.dense('fc1', flat, 3), Layer.relu('relu2'), Layer.dense('out', 3, 1)]
    net = sequential(input_shape, layers)
    params = {name: rng.normal(0.0, 0.7, size=value.shape) for name, value in net.parameter_arrays().items()}
    return net.with_parameters(params)


def random_dataset(rng, n=12, input_shape=(4,), output_dim=1, label_scale=3.0) -> Dataset:
    inputs = rng.uniform(-1.0, 1.0, size=(n,) + tuple(input_shape))
    labels = rng.normal(0.0, label_scale, size=(n, output_dim))
    return Dataset(inputs, labels)


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of an array"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + h
        upper = f(x.copy())
        x[idx] = original - h
        lower = f(x.copy())
        x[idx] = original
        grad[idx] = (upper - lower) / (2 * h)
    return grad


@pytest.fixture
def make_dense_net(rng):
    return lambda sizes=(4, 6, 5, 1), scale=1.0: random_dense_net(rng, sizes, scale)


@pytest.fixture
def make_conv_net(rng):
    return lambda input_shape=(8, 8, 1): random_conv_net(rng, input_shape)


@pytest.fixture
def make_dataset(rng):
    return lambda n=12, input_shape=(4,), output_dim=1, label_scale=3.0: \
        random_dataset(rng, n, input_shape, output_dim, label_scale)


@pytest.fixture(autouse=True)
def quiet_logging(caplog):
    caplog.set_level(logging.WARNING)
