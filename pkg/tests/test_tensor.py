import numpy as np
import pytest

from core import tensor as T
from core.errors import ContractError, DimensionError
from core.tensor import Tensor


def test_tensor_data_is_frozen_copy():
    source = np.array([1.0, 2.0])
    t = Tensor(source)
    source[0] = 99.0
    assert t.data[0] == 1.0
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_elementwise_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2,\).*\(3,\)"):
        T.add(np.ones(2), np.ones(3))


def test_scalar_broadcast_is_the_only_broadcast():
    np.testing.assert_array_equal(T.mul(np.array([1.0, -2.0]), 3.0).data, [3.0, -6.0])
    with pytest.raises(DimensionError):
        T.add(np.ones((2, 3)), np.ones(3))


def test_sign_of_zero_is_zero():
    np.testing.assert_array_equal(T.sign(np.array([-0.5, 0.0, 2.0])).data, [-1.0, 0.0, 1.0])


def test_clip_nonneg_and_relu_values():
    x = np.array([-1.0, 0.0, 2.5])
    np.testing.assert_array_equal(T.clip_nonneg(x).data, [0.0, 0.0, 2.5])
    np.testing.assert_array_equal(T.relu(x).data, [0.0, 0.0, 2.5])


def test_matmul_dimension_error():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_linear_matches_matrix_product(rng):
    x, w, b = rng.normal(size=(5, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    np.testing.assert_allclose(T.linear(x, w, b).data, x @ w.T + b)
    with pytest.raises(DimensionError):
        T.linear(x, w, np.ones(4))


def test_reshape_rejects_incompatible_shape():
    with pytest.raises(DimensionError):
        T.reshape(np.ones(6), (4, 2))


def test_reduce_mean_over_empty_axis():
    with pytest.raises(ContractError):
        T.reduce_mean(np.ones((0, 3)), axis=0)


@pytest.mark.parametrize("size,kernel,stride,expected", [
    (128, 5, 2, (64, 1, 2)),
    (320, 5, 2, (160, 1, 2)),
    (64, 3, 2, (32, 0, 1)),
    (7, 3, 1, (7, 1, 1)),
])
def test_same_padding_sizes(size, kernel, stride, expected):
    assert T.conv_output_size(size, kernel, stride, 'same') == expected


def test_unknown_padding_mode():
    with pytest.raises(ContractError):
        T.conv_output_size(8, 3, 1, 'full')


def _reference_conv(x, k, stride):
    kh, kw, c, f = k.shape
    oh = (x.shape[0] - kh) // stride + 1
    ow = (x.shape[1] - kw) // stride + 1
    out = np.zeros((oh, ow, f))
    for i in range(oh):
        for j in range(ow):
            patch = x[i * stride:i * stride + kh, j * stride:j * stride + kw, :]
            for m in range(f):
                out[i, j, m] = np.sum(patch * k[:, :, :, m])
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_valid_matches_direct_loop(rng, stride):
    x, k = rng.normal(size=(7, 9, 2)), rng.normal(size=(3, 3, 2, 4))
    np.testing.assert_allclose(T.conv2d(x, k, stride).data, _reference_conv(x, k, stride), atol=1e-12)


def test_conv2d_same_pads_smaller_half_before(rng):
    x, k = rng.normal(size=(6, 6, 1)), rng.normal(size=(4, 4, 1, 1))
    padded = np.pad(x, ((1, 2), (1, 2), (0, 0)))
    np.testing.assert_allclose(T.conv2d(x, k, 1, 'same').data, _reference_conv(padded, k, 1), atol=1e-12)


def test_conv2d_batched_equals_per_sample(rng):
    x, k = rng.normal(size=(3, 6, 5, 2)), rng.normal(size=(3, 3, 2, 2))
    batched = T.conv2d(x, k, 2, 'same').data
    for i in range(3):
        np.testing.assert_array_equal(batched[i], T.conv2d(x[i], k, 2, 'same').data)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv2d(np.ones((4, 4, 3)), np.ones((3, 3, 2, 1)))


def test_maxpool2d_values():
    x = np.arange(16, dtype=float).reshape(4, 4, 1)
    np.testing.assert_array_equal(T.maxpool2d(x, 2).data[:, :, 0], [[5.0, 7.0], [13.0, 15.0]])


def test_operator_overloads():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 5.0])
    np.testing.assert_array_equal((a + b).data, [4.0, 7.0])
    np.testing.assert_array_equal((a - b).data, [-2.0, -3.0])
    np.testing.assert_array_equal((2.0 * a).data, [2.0, 4.0])
    np.testing.assert_array_equal((-a).data, [-1.0, -2.0])
    np.testing.assert_array_equal((b / 2.0).data, [1.5, 2.5])
