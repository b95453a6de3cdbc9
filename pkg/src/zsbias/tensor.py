"""Dense 3D kernels and their vector-Jacobian products.

Tensors are plain float64 ``numpy`` arrays laid out as ``(C, D, H, W)``.
Every forward kernel ``op`` has a companion ``op_backward`` that maps an
upstream gradient to gradients with respect to the op's inputs. Reductions
run in a fixed order (no BLAS, no threading), so every kernel is
deterministic: identical inputs give bitwise-identical outputs.

Resampling uses the corner-aligned convention: sample ``j`` of an axis of
length ``n_out`` sits at source coordinate ``j * (n_in - 1) / (n_out - 1)``.
"""
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError

Tensor = np.ndarray

_OFFSETS = [(a, b, c) for a in range(3) for b in range(3) for c in range(3)]


def as_tensor(x, ndim=None, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if ndim is not None and x.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-D, got shape {x.shape}")
    if x.size == 0:
        raise InvalidArgumentError(f"{name} has an empty extent: {x.shape}")
    return x


def check_finite(x, name="input"):
    if not np.isfinite(x).all():
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return x


# --------------------------------------------------------------------------
# convolutions
# --------------------------------------------------------------------------

def conv3d_depthwise(x, kernels, bias):
    """Per-channel 3x3x3 convolution, stride 1, zero padding 1."""
    x = as_tensor(x, 4, "input")
    kernels = as_tensor(kernels, 4, "kernels")
    bias = as_tensor(bias, 1, "bias")
    C, D, H, W = x.shape
    if kernels.shape != (C, 3, 3, 3) or bias.shape != (C,):
        raise InvalidArgumentError(
            f"depthwise kernels {kernels.shape} / bias {bias.shape} do not match {C} channels"
        )
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.zeros_like(x)
    for a, b, c in _OFFSETS:
        out += kernels[:, a, b, c, None, None, None] * xp[:, a:a + D, b:b + H, c:c + W]
    out += bias[:, None, None, None]
    return out


def conv3d_depthwise_backward(grad, x, kernels):
    """Return ``(grad_input, grad_kernels, grad_bias)``."""
    grad = as_tensor(grad, 4, "grad")
    x = as_tensor(x, 4, "input")
    if grad.shape != x.shape:
        raise InvalidArgumentError(f"grad shape {grad.shape} != input shape {x.shape}")
    C, D, H, W = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    gxp = np.zeros_like(xp)
    gk = np.zeros((C, 3, 3, 3))
    for a, b, c in _OFFSETS:
        window = (slice(None), slice(a, a + D), slice(b, b + H), slice(c, c + W))
        gxp[window] += kernels[:, a, b, c, None, None, None] * grad
        gk[:, a, b, c] = np.einsum("cdhw,cdhw->c", grad, xp[window])
    gb = grad.sum(axis=(1, 2, 3))
    return gxp[:, 1:-1, 1:-1, 1:-1], gk, gb


def conv3d_pointwise(x, kernels, bias):
    """1x1x1 convolution: a per-voxel linear map across channels."""
    x = as_tensor(x, 4, "input")
    kernels = as_tensor(kernels, 2, "kernels")
    bias = as_tensor(bias, 1, "bias")
    cout, cin = kernels.shape
    if x.shape[0] != cin or bias.shape != (cout,):
        raise InvalidArgumentError(
            f"pointwise kernels {kernels.shape} / bias {bias.shape} incompatible with input {x.shape}"
        )
    return np.einsum("oi,idhw->odhw", kernels, x) + bias[:, None, None, None]


def conv3d_pointwise_backward(grad, x, kernels):
    grad = as_tensor(grad, 4, "grad")
    x = as_tensor(x, 4, "input")
    if grad.shape[1:] != x.shape[1:] or grad.shape[0] != kernels.shape[0]:
        raise InvalidArgumentError(f"grad shape {grad.shape} incompatible with input {x.shape}")
    gx = np.einsum("oi,odhw->idhw", kernels, grad)
    gw = np.einsum("odhw,idhw->oi", grad, x)
    gb = grad.sum(axis=(1, 2, 3))
    return gx, gw, gb


# --------------------------------------------------------------------------
# trilinear resampling
# --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _axis_plan(n_in, n_out):
    if n_out == 1 or n_in == 1:
        coords = np.zeros(n_out)
    else:
        coords = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(coords).astype(np.intp), max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    frac = coords - lo
    frac[hi == lo] = 0.0
    weights = np.zeros((n_out, n_in))
    np.add.at(weights, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(weights, (np.arange(n_out), hi), frac)
    for arr in (lo, hi, frac, weights):
        arr.setflags(write=False)
    return lo, hi, frac, weights


def _lerp_axis(x, axis, n_out):
    lo, hi, frac, _ = _axis_plan(x.shape[axis], n_out)
    shape = [1] * x.ndim
    shape[axis] = n_out
    x0 = np.take(x, lo, axis=axis)
    # x0 + f * (x1 - x0) keeps constant fields exact
    return x0 + frac.reshape(shape) * (np.take(x, hi, axis=axis) - x0)


def trilinear_resize(x, target_shape):
    """Resample ``(C, D, H, W)`` to ``(C, *target_shape)`` (corner-aligned)."""
    x = as_tensor(x, 4, "input")
    target_shape = tuple(int(t) for t in target_shape)
    if len(target_shape) != 3 or min(target_shape) < 1:
        raise InvalidArgumentError(f"invalid target shape {target_shape}")
    out = x
    for axis, n_out in zip((1, 2, 3), target_shape):
        if out.shape[axis] != n_out:
            out = _lerp_axis(out, axis, n_out)
    return out if out is not x else x.copy()


def trilinear_resize_backward(grad, input_shape):
    grad = as_tensor(grad, 4, "grad")
    input_shape = tuple(input_shape)
    if len(input_shape) != 4 or grad.shape[0] != input_shape[0]:
        raise InvalidArgumentError(f"grad {grad.shape} incompatible with input shape {input_shape}")
    g = grad
    specs = ("cdhw,dx->cxhw", "cdhw,hx->cdxw", "cdhw,wx->cdhx")
    for axis, spec in zip((1, 2, 3), specs):
        n_in = input_shape[axis]
        if g.shape[axis] != n_in:
            _, _, _, weights = _axis_plan(n_in, g.shape[axis])
            g = np.einsum(spec, g, weights)
    return g if g is not grad else grad.copy()


# --------------------------------------------------------------------------
# pooling
# --------------------------------------------------------------------------

def _block_counts(n, r):
    nb = -(-n // r)
    return np.minimum(r, n - r * np.arange(nb)).astype(np.float64)


def avg_pool3d(x, region):
    """Non-overlapping ``region**3`` block means; partial edge blocks
    average only the voxels they contain."""
    x = as_tensor(x, 4, "input")
    r = int(region)
    if r < 1:
        raise InvalidArgumentError(f"pooling region must be >= 1, got {region}")
    if r == 1:
        return x.copy()
    C, D, H, W = x.shape
    nd, nh, nw = -(-D // r), -(-H // r), -(-W // r)
    xp = np.pad(x, ((0, 0), (0, nd * r - D), (0, nh * r - H), (0, nw * r - W)))
    sums = xp.reshape(C, nd, r, nh, r, nw, r).sum(axis=(2, 4, 6))
    counts = (
        _block_counts(D, r)[:, None, None]
        * _block_counts(H, r)[None, :, None]
        * _block_counts(W, r)[None, None, :]
    )
    return sums / counts


def avg_pool3d_backward(grad, input_shape, region):
    grad = as_tensor(grad, 4, "grad")
    r = int(region)
    C, D, H, W = input_shape
    if r == 1:
        return grad.copy()
    counts = (
        _block_counts(D, r)[:, None, None]
        * _block_counts(H, r)[None, :, None]
        * _block_counts(W, r)[None, None, :]
    )
    if grad.shape != (C,) + counts.shape:
        raise InvalidArgumentError(f"grad {grad.shape} incompatible with input shape {input_shape}")
    g = grad / counts
    g = np.repeat(np.repeat(np.repeat(g, r, axis=1), r, axis=2), r, axis=3)
    return g[:, :D, :H, :W]


# --------------------------------------------------------------------------
# elementwise ops
# --------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, x):
    return grad * (x > 0)


def tanh(x):
    return np.tanh(x)


def tanh_backward(grad, out):
    """``out`` is the forward result ``tanh(x)``."""
    return grad * (1.0 - out * out)


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid_backward(grad, out):
    return grad * out * (1.0 - out)


def abs_backward(grad, x):
    # subgradient 0 at the kink
    return grad * np.sign(x)


def square_backward(grad, x):
    return 2.0 * grad * x


def mul_backward(grad, x, y):
    return grad * y, grad * x


def add_backward(grad):
    return grad, grad
