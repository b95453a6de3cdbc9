"""Zero-reference objective: smoothness, spatial consistency, exposure and
image-prior terms, each with an analytic gradient.

All inputs are ``(1, D, H, W)`` float64 arrays at full resolution. Gradient
functions return arrays shaped like their inputs. Where ``|.|`` hits a kink
the subgradient 0 is used.
"""
from dataclasses import asdict, dataclass
from itertools import product

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError

NEIGHBORHOODS = (6, 18, 26)


def half_offsets(neighborhood):
    """One offset from each +/- pair of the 6-, 18- or 26-neighborhood."""
    if neighborhood not in NEIGHBORHOODS:
        raise InvalidArgumentError(f"neighborhood must be one of {NEIGHBORHOODS}, got {neighborhood}")
    out = []
    for off in product((-1, 0, 1), repeat=3):
        taxicab = sum(abs(o) for o in off)
        if taxicab == 0 or (neighborhood == 6 and taxicab > 1) or (neighborhood == 18 and taxicab > 2):
            continue
        if off > (0, 0, 0):
            out.append(off)
    return out


@dataclass
class LossWeights:
    w_smo_alpha: float = 1600.0
    w_smo_bias: float = 1600.0
    w_spa: float = 1.0
    w_exp: float = 1.0
    w_fidelity: float = 1.0
    exposure_target: float = 0.6
    spa_region: int = 4
    exp_region: int = 8
    neighborhood: int = 6

    def __post_init__(self):
        for name in ("w_smo_alpha", "w_smo_bias", "w_spa", "w_exp", "w_fidelity"):
            if not getattr(self, name) >= 0:
                raise InvalidArgumentError(f"{name} must be >= 0")
        if not 0.0 < self.exposure_target < 1.0:
            raise InvalidArgumentError("exposure_target must lie in (0, 1)")
        if self.spa_region < 1 or self.exp_region < 1:
            raise InvalidArgumentError("pooling regions must be >= 1")
        half_offsets(self.neighborhood)


@dataclass
class LossBreakdown:
    smo_alpha: float
    spa: float
    exp: float
    fidelity: float
    smo_bias: float
    total: float

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# smoothness
# --------------------------------------------------------------------------

def _forward_diffs(m):
    diffs = []
    for axis in (1, 2, 3):
        d = np.zeros_like(m)
        n = m.shape[axis]
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
        d[tuple(lo)] = m[tuple(hi)] - m[tuple(lo)]
        diffs.append(d)
    return diffs


def smoothness_loss(m):
    """Mean over voxels of the squared L1 norm of the forward-difference
    gradient; the last slice along each axis contributes 0 for that axis."""
    m = T.as_tensor(m, 4, "map")
    s = sum(np.abs(d) for d in _forward_diffs(m))
    return float(np.mean(s * s))


def smoothness_loss_grad(m):
    m = T.as_tensor(m, 4, "map")
    diffs = _forward_diffs(m)
    s = sum(np.abs(d) for d in diffs)
    g_s = 2.0 * s / m.size
    g = np.zeros_like(m)
    for axis, d in zip((1, 2, 3), diffs):
        g_d = g_s * np.sign(d)
        n = m.shape[axis]
        hi = [slice(None)] * 4
        lo = [slice(None)] * 4
        hi[axis], lo[axis] = slice(1, n), slice(0, n - 1)
        g[tuple(hi)] += g_d[tuple(lo)]
        g[tuple(lo)] -= g_d[tuple(lo)]
    return g


# --------------------------------------------------------------------------
# spatial consistency
# --------------------------------------------------------------------------

def _pair_slices(shape, off):
    """Slices selecting blocks ``i`` and their neighbours ``i + off``."""
    a, b = [slice(None)], [slice(None)]
    for n, o in zip(shape[1:], off):
        if o == 1:
            a.append(slice(0, n - 1)); b.append(slice(1, n))
        elif o == -1:
            a.append(slice(1, n)); b.append(slice(0, n - 1))
        else:
            a.append(slice(None)); b.append(slice(None))
    return tuple(a), tuple(b)


def _check_same(a, b):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")


def spatial_consistency_loss(hc, y, region=4, neighborhood=6):
    """Pooled-block contrast preservation between ``hc`` and ``y``.

    Sums ``(|P_i - P_j| - |Q_i - Q_j|)**2`` over each block ``i`` and every
    existing neighbour ``j`` (ordered pairs), divided by the block count.
    """
    hc = T.as_tensor(hc, 4, "hc")
    y = T.as_tensor(y, 4, "y")
    _check_same(hc, y)
    P, Q = T.avg_pool3d(hc, region), T.avg_pool3d(y, region)
    total = 0.0
    for off in half_offsets(neighborhood):
        a, b = _pair_slices(P.shape, off)
        r = np.abs(P[a] - P[b]) - np.abs(Q[a] - Q[b])
        total += 2.0 * float(np.sum(r * r))
    return total / P.size


def spatial_consistency_loss_grad(hc, y, region=4, neighborhood=6):
    """Gradient with respect to ``hc``."""
    hc = T.as_tensor(hc, 4, "hc")
    y = T.as_tensor(y, 4, "y")
    _check_same(hc, y)
    P, Q = T.avg_pool3d(hc, region), T.avg_pool3d(y, region)
    gP = np.zeros_like(P)
    for off in half_offsets(neighborhood):
        a, b = _pair_slices(P.shape, off)
        dP = P[a] - P[b]
        r = np.abs(dP) - np.abs(Q[a] - Q[b])
        g = 4.0 * r * np.sign(dP) / P.size
        gP[a] += g
        gP[b] -= g
    return T.avg_pool3d_backward(gP, hc.shape, region)


# --------------------------------------------------------------------------
# exposure
# --------------------------------------------------------------------------

def exposure_loss(hc, region=8, target=0.6):
    """Mean squared deviation of ``region**3`` block means from ``target``."""
    P = T.avg_pool3d(T.as_tensor(hc, 4, "hc"), region)
    return float(np.mean((P - target) ** 2))


def exposure_loss_grad(hc, region=8, target=0.6):
    hc = T.as_tensor(hc, 4, "hc")
    P = T.avg_pool3d(hc, region)
    return T.avg_pool3d_backward(2.0 * (P - target) / P.size, hc.shape, region)


# --------------------------------------------------------------------------
# image prior
# --------------------------------------------------------------------------

def fidelity_loss(y, x_hat, b_hat):
    """Mean absolute reconstruction error ``|y - x_hat * b_hat|``."""
    return float(np.mean(np.abs(y - x_hat * b_hat)))


def fidelity_loss_grad(y, x_hat, b_hat):
    """Gradients with respect to ``(x_hat, b_hat)``."""
    g = -np.sign(y - x_hat * b_hat) / y.size
    return g * b_hat, g * x_hat


def prior_loss(y, x_hat, b_hat, w_smo_bias=1600.0):
    y, x_hat, b_hat = (T.as_tensor(v, 4) for v in (y, x_hat, b_hat))
    _check_same(y, x_hat)
    _check_same(y, b_hat)
    return fidelity_loss(y, x_hat, b_hat) + w_smo_bias * smoothness_loss(b_hat)


# --------------------------------------------------------------------------
# composite
# --------------------------------------------------------------------------

def total_loss(y, hc_out, alpha, b_hat, weights=None):
    """Unweighted components plus the weighted total."""
    w = weights or LossWeights()
    y, hc_out, alpha, b_hat = (T.as_tensor(v, 4) for v in (y, hc_out, alpha, b_hat))
    for other in (hc_out, alpha, b_hat):
        _check_same(y, other)
    parts = dict(
        smo_alpha=smoothness_loss(alpha),
        spa=spatial_consistency_loss(hc_out, y, w.spa_region, w.neighborhood),
        exp=exposure_loss(hc_out, w.exp_region, w.exposure_target),
        fidelity=fidelity_loss(y, hc_out, b_hat),
        smo_bias=smoothness_loss(b_hat),
    )
    total = (
        w.w_smo_alpha * parts["smo_alpha"]
        + w.w_spa * parts["spa"]
        + w.w_exp * parts["exp"]
        + w.w_fidelity * parts["fidelity"]
        + w.w_smo_bias * parts["smo_bias"]
    )
    return LossBreakdown(total=total, **parts)


def total_loss_grad(y, hc_out, alpha, b_hat, weights=None):
    """Gradients of the weighted total w.r.t. ``(hc_out, alpha, b_hat)``."""
    w = weights or LossWeights()
    g_fid_x, g_fid_b = fidelity_loss_grad(y, hc_out, b_hat)
    g_hc = (
        w.w_spa * spatial_consistency_loss_grad(hc_out, y, w.spa_region, w.neighborhood)
        + w.w_exp * exposure_loss_grad(hc_out, w.exp_region, w.exposure_target)
        + w.w_fidelity * g_fid_x
    )
    g_alpha = w.w_smo_alpha * smoothness_loss_grad(alpha)
    g_b = w.w_fidelity * g_fid_b + w.w_smo_bias * smoothness_loss_grad(b_hat)
    return g_hc, g_alpha, g_b
