import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from zsbias import gradcheck
from zsbias import tensor as T
from zsbias.errors import InvalidArgumentError


def brute_depthwise(x, k, b):
    C, D, H, W = x.shape
    out = np.zeros_like(x)
    for c in range(C):
        for d in range(D):
            for h in range(H):
                for w in range(W):
                    acc = b[c]
                    for a in range(3):
                        for bb in range(3):
                            for cc in range(3):
                                z, y, xx = d + a - 1, h + bb - 1, w + cc - 1
                                if 0 <= z < D and 0 <= y < H and 0 <= xx < W:
                                    acc += k[c, a, bb, cc] * x[c, z, y, xx]
                    out[c, d, h, w] = acc
    return out


def map_coords_resize(x, target):
    """Independent trilinear oracle: scipy linear interpolation at
    corner-aligned sample coordinates."""
    axes = [
        np.zeros(1) if n_out == 1 else np.arange(n_out) * (n_in - 1) / (n_out - 1)
        for n_in, n_out in zip(x.shape[1:], target)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([ndimage.map_coordinates(c, grid, order=1, mode="nearest") for c in x])


class TestDepthwise:
    def test_delta_kernel_is_identity(self):
        k = np.zeros((1, 3, 3, 3))
        k[0, 1, 1, 1] = 1.0
        out = T.conv3d_depthwise(np.ones((1, 3, 3, 3)), k, np.zeros(1))
        np.testing.assert_array_equal(out, np.ones((1, 3, 3, 3)))

    def test_zero_kernel_gives_bias(self, rng):
        out = T.conv3d_depthwise(rng.normal(size=(2, 4, 4, 4)), np.zeros((2, 3, 3, 3)), np.full(2, 0.5))
        np.testing.assert_array_equal(out, 0.5)

    def test_box_kernel_center_and_corner(self):
        out = T.conv3d_depthwise(np.ones((1, 5, 5, 5)), np.full((1, 3, 3, 3), 1 / 27), np.zeros(1))
        assert out[0, 2, 2, 2] == pytest.approx(1.0, abs=1e-15)
        assert out[0, 0, 0, 0] == pytest.approx(8 / 27, abs=1e-15)

    def test_matches_brute_force(self, rng):
        x = rng.normal(size=(3, 4, 5, 3))
        k = rng.normal(size=(3, 3, 3, 3))
        b = rng.normal(size=3)
        np.testing.assert_allclose(T.conv3d_depthwise(x, k, b), brute_depthwise(x, k, b), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            T.conv3d_depthwise(np.ones((2, 3, 3, 3)), np.ones((3, 3, 3, 3)), np.zeros(2))


class TestPointwise:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 2, 2, 2))
        np.testing.assert_array_equal(T.conv3d_pointwise(x, np.eye(3), np.zeros(3)), x)

    def test_zero_kernels_give_bias(self, rng):
        out = T.conv3d_pointwise(rng.normal(size=(2, 2, 2, 2)), np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]))
        for o, b in enumerate((1.0, 2.0, 3.0)):
            np.testing.assert_array_equal(out[o], b)

    def test_hand_dot_product(self):
        x = np.array([0.4, 0.8]).reshape(2, 1, 1, 1)
        out = T.conv3d_pointwise(x, np.array([[0.25, 0.75]]), np.zeros(1))
        assert out.item() == pytest.approx(0.7, abs=1e-15)

    def test_channel_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            T.conv3d_pointwise(np.ones((2, 2, 2, 2)), np.ones((1, 3)), np.zeros(1))


class TestTrilinear:
    def test_ramp_upsample(self):
        x = np.array([0.0, 1.0]).reshape(1, 2, 1, 1)
        out = T.trilinear_resize(x, (3, 1, 1))
        np.testing.assert_array_equal(out.ravel(), [0.0, 0.5, 1.0])

    def test_constant_roundtrip(self):
        x = np.full((1, 64, 64, 64), 0.37)
        small = T.trilinear_resize(x, (8, 8, 8))
        np.testing.assert_array_equal(small, 0.37)
        np.testing.assert_array_equal(T.trilinear_resize(small, (64, 64, 64)), 0.37)

    def test_linear_field_reproduced(self):
        z, y, x = np.meshgrid(np.arange(5.0), np.arange(4.0), np.arange(6.0), indexing="ij")
        field = (0.5 * z - 0.25 * y + 0.125 * x)[None]
        out = T.trilinear_resize(field, (9, 7, 11))
        zz, yy, xx = np.meshgrid(np.linspace(0, 4, 9), np.linspace(0, 3, 7), np.linspace(0, 5, 11), indexing="ij")
        np.testing.assert_allclose(out[0], 0.5 * zz - 0.25 * yy + 0.125 * xx, atol=1e-12)

    @pytest.mark.parametrize("target", [(7, 3, 5), (2, 9, 1), (1, 1, 1), (4, 4, 4)])
    def test_matches_scipy_oracle(self, rng, target):
        x = rng.normal(size=(2, 4, 5, 3))
        np.testing.assert_allclose(T.trilinear_resize(x, target), map_coords_resize(x, target), atol=1e-12)

    def test_zero_target_rejected(self):
        with pytest.raises(InvalidArgumentError):
            T.trilinear_resize(np.ones((1, 2, 2, 2)), (0, 2, 2))

    @settings(max_examples=40, deadline=None)
    @given(
        value=st.floats(-1e3, 1e3, allow_nan=False),
        src=st.tuples(*[st.integers(1, 9)] * 3),
        dst=st.tuples(*[st.integers(1, 17)] * 3),
    )
    def test_constant_exact_property(self, value, src, dst):
        out = T.trilinear_resize(np.full((1,) + src, value), dst)
        assert out.shape == (1,) + dst
        assert np.all(out == value)


class TestAvgPool:
    def test_constant(self):
        np.testing.assert_array_equal(T.avg_pool3d(np.full((1, 5, 5, 5), 2.5), 2), 2.5)

    def test_block_mean(self):
        x = (np.arange(8) / 7).reshape(1, 2, 2, 2)
        assert T.avg_pool3d(x, 2).item() == pytest.approx(0.5, abs=1e-15)

    def test_region_one_is_identity(self, rng):
        x = rng.normal(size=(1, 3, 4, 5))
        np.testing.assert_array_equal(T.avg_pool3d(x, 1), x)

    def test_partial_edge_blocks(self):
        x = np.zeros((1, 3, 1, 1))
        x[0, :, 0, 0] = [1.0, 3.0, 10.0]
        np.testing.assert_allclose(T.avg_pool3d(x, 2).ravel(), [2.0, 10.0])

    def test_invalid_region(self):
        with pytest.raises(InvalidArgumentError):
            T.avg_pool3d(np.ones((1, 2, 2, 2)), 0)

    @settings(max_examples=30, deadline=None)
    @given(r=st.integers(1, 4), blocks=st.tuples(*[st.integers(1, 3)] * 3), seed=st.integers(0, 2**16))
    def test_preserves_mean_for_complete_blocks(self, r, blocks, seed):
        x = np.random.default_rng(seed).normal(size=(2,) + tuple(b * r for b in blocks))
        pooled = T.avg_pool3d(x, r)
        np.testing.assert_allclose(pooled.mean(axis=(1, 2, 3)), x.mean(axis=(1, 2, 3)), atol=1e-12)


class TestElementwiseBackward:
    def test_mul_product_rule(self, rng):
        x, y, g = rng.normal(size=(3, 4))
        gx, gy = T.mul_backward(g, x, y)
        np.testing.assert_array_equal(gx, g * y)
        np.testing.assert_array_equal(gy, g * x)

    def test_tanh_at_zero(self):
        assert T.tanh_backward(1.0, T.tanh(0.0)) == 1.0

    def test_abs_subgradient_zero_at_kink(self):
        assert T.abs_backward(1.0, 0.0) == 0.0


def test_ops_are_pure(rng):
    x = rng.normal(size=(2, 5, 5, 5))
    k = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)
    before = x.copy()
    a1 = T.conv3d_depthwise(x, k, b)
    a2 = T.conv3d_depthwise(x, k, b)
    assert a1.tobytes() == a2.tobytes()
    assert T.trilinear_resize(x, (3, 7, 2)).tobytes() == T.trilinear_resize(x, (3, 7, 2)).tobytes()
    assert T.avg_pool3d(x, 2).tobytes() == T.avg_pool3d(x, 2).tobytes()
    np.testing.assert_array_equal(x, before)


def test_depthwise_gradient_example():
    # random 1x4x4x4 input, h = 1e-3 finite differences
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 4, 4, 4))
    k = rng.normal(size=(1, 3, 3, 3))
    R = rng.normal(size=x.shape)
    gx, gk, _ = T.conv3d_depthwise_backward(R, x, k)
    f = lambda: float(np.sum(R * T.conv3d_depthwise(x, k, np.zeros(1))))  # noqa: E731
    for analytic, arr in ((gx, x), (gk, k)):
        numeric, _ = gradcheck.numerical_gradient(f, arr)
        assert gradcheck.relative_error(analytic, numeric).max() < 1e-4


CHEAP_OPS = [
    "conv3d_depthwise", "conv3d_pointwise", "trilinear_resize", "avg_pool3d",
    "add", "mul", "tanh", "sigmoid", "relu", "abs", "square",
]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("op", CHEAP_OPS)
def test_gradient_check_op(op, seed):
    size = 3 + seed
    result = gradcheck.CHECKS[op](np.random.default_rng(seed), size)
    assert result.checked > 0
    assert result.max_rel_error < 1e-4, result
