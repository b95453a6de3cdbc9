"""Finite-difference verification of every analytic backward pass.

Each registered check builds a random instance, contracts the op's output
with a fixed random tensor to get a scalar, and compares the analytic
gradient against Richardson-extrapolated central differences (base step
1e-3, float64). The error of one
element is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``.

Perturbations that move an input across a non-differentiable point (a ReLU
or ``|.|`` kink) are detected through a sign signature and excluded; the
number excluded is reported.
"""
from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import network
from . import tensor as T
from .config import CorrectionConfig
from .homogeneity import hc_iterate_backward, hc_iterate_with_trace
from .optimizer import VolumeContext, loss_and_grads

STEP = 1e-3
FLOOR = 1e-6
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int
    skipped: int

    @property
    def passed(self):
        return self.checked > 0 and self.max_rel_error < TOLERANCE


def relative_error(analytic, numeric, floor=FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numerical_gradient(f, x, h=STEP, signature=None):
    """Richardson-extrapolated central differences of scalar ``f`` w.r.t.
    every element of ``x`` (perturbed in place, then restored).

    Combines steps ``h`` and ``h/2`` as ``(4 D(h/2) - D(h)) / 3``, which
    cancels the ``h**2`` truncation term. Returns ``(grad, valid)`` where
    ``valid`` is False for elements whose perturbation changed
    ``signature()``.
    """
    grad = np.zeros_like(x)
    valid = np.ones(x.shape, dtype=bool)
    base = signature() if signature else None
    flat, gflat, vflat = x.reshape(-1), grad.reshape(-1), valid.reshape(-1)

    def probe(i, value):
        flat[i] = value
        out = f()
        if signature is not None and not np.array_equal(signature(), base):
            vflat[i] = False
        return out

    for i in range(flat.size):
        orig = flat[i]
        d_full = (probe(i, orig + h) - probe(i, orig - h)) / (2.0 * h)
        d_half = (probe(i, orig + h / 2) - probe(i, orig - h / 2)) / h
        flat[i] = orig
        gflat[i] = (4.0 * d_half - d_full) / 3.0
    return grad, valid


def compare(name, analytic, f, inputs, signature=None, fault=False):
    """Compare analytic gradients (dict name->array) against FD of ``f``."""
    worst, checked, skipped = 0.0, 0, 0
    for key, x in inputs.items():
        a = analytic[key] * (1.0 + 1e-2) if fault else analytic[key]
        n, valid = numerical_gradient(f, x, signature=signature)
        err = relative_error(a, n)[valid]
        checked += int(valid.sum())
        skipped += int((~valid).sum())
        if err.size:
            worst = max(worst, float(err.max()))
    return CheckResult(name, worst, checked, skipped)


def _away_from_zero(rng, shape, low=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, shape)


def _op_check(name, forward, backward, inputs, rng, fault, signature=None):
    """Scalar = sum(R * forward(**inputs)); backward(R, inputs) -> dict."""
    R = rng.normal(size=forward(**inputs).shape)
    analytic = backward(R, inputs)
    return compare(name, analytic, lambda: float(np.sum(R * forward(**inputs))), inputs, signature, fault)


# --------------------------------------------------------------------------
# registered checks
# --------------------------------------------------------------------------

def check_conv3d_depthwise(rng, size, fault=False):
    C = 2
    inputs = dict(
        x=rng.normal(size=(C, size, size, size)),
        kernels=rng.normal(size=(C, 3, 3, 3)),
        bias=rng.normal(size=C),
    )

    def backward(R, inp):
        gx, gk, gb = T.conv3d_depthwise_backward(R, inp["x"], inp["kernels"])
        return dict(x=gx, kernels=gk, bias=gb)

    return _op_check("conv3d_depthwise", T.conv3d_depthwise, backward, inputs, rng, fault)


def check_conv3d_pointwise(rng, size, fault=False):
    inputs = dict(
        x=rng.normal(size=(3, size, size, size)),
        kernels=rng.normal(size=(2, 3)),
        bias=rng.normal(size=2),
    )

    def backward(R, inp):
        gx, gk, gb = T.conv3d_pointwise_backward(R, inp["x"], inp["kernels"])
        return dict(x=gx, kernels=gk, bias=gb)

    return _op_check("conv3d_pointwise", T.conv3d_pointwise, backward, inputs, rng, fault)


def check_trilinear_resize(rng, size, fault=False):
    src = (2, max(size // 2, 1), size, size + 1)
    target = (size, max(size // 3, 1), size + 2)
    inputs = dict(x=rng.normal(size=src))
    return _op_check(
        "trilinear_resize",
        lambda x: T.trilinear_resize(x, target),
        lambda R, inp: dict(x=T.trilinear_resize_backward(R, inp["x"].shape)),
        inputs, rng, fault,
    )


def check_avg_pool3d(rng, size, fault=False):
    inputs = dict(x=rng.normal(size=(2, size, size + 1, size + 2)))
    return _op_check(
        "avg_pool3d",
        lambda x: T.avg_pool3d(x, 3),
        lambda R, inp: dict(x=T.avg_pool3d_backward(R, inp["x"].shape, 3)),
        inputs, rng, fault,
    )


def _unary(name, fwd, bwd_on_out, sampler):
    def check(rng, size, fault=False):
        inputs = dict(x=sampler(rng, (2, size, size, size)))
        return _op_check(
            name, fwd,
            lambda R, inp: dict(x=bwd_on_out(R, inp["x"])),
            inputs, rng, fault,
        )
    check.__name__ = f"check_{name}"
    return check


check_tanh = _unary("tanh", T.tanh, lambda g, x: T.tanh_backward(g, np.tanh(x)),
                    lambda r, s: r.normal(size=s))
check_sigmoid = _unary("sigmoid", T.sigmoid, lambda g, x: T.sigmoid_backward(g, T.sigmoid(x)),
                       lambda r, s: 2 * r.normal(size=s))
check_relu = _unary("relu", T.relu, T.relu_backward, _away_from_zero)
check_abs = _unary("abs", lambda x: np.abs(x), T.abs_backward, _away_from_zero)
check_square = _unary("square", lambda x: np.square(x), T.square_backward, lambda r, s: r.normal(size=s))


def check_add(rng, size, fault=False):
    shape = (2, size, size, size)
    inputs = dict(x=rng.normal(size=shape), y=rng.normal(size=shape))
    return _op_check(
        "add", lambda x, y: x + y,
        lambda R, inp: dict(zip("xy", T.add_backward(R))),
        inputs, rng, fault,
    )


def check_mul(rng, size, fault=False):
    shape = (2, size, size, size)
    inputs = dict(x=rng.normal(size=shape), y=rng.normal(size=shape))
    return _op_check(
        "mul", lambda x, y: x * y,
        lambda R, inp: dict(zip("xy", T.mul_backward(R, inp["x"], inp["y"]))),
        inputs, rng, fault,
    )


def check_hc_iterate(rng, size, fault=False):
    inputs = dict(I=rng.uniform(0, 1, (1, size, size, size)), alpha=rng.uniform(-1, 1, (1, size, size, size)))
    n = 4

    def fwd(I, alpha):
        return hc_iterate_with_trace(I, alpha, n, validate=False)[-1]

    def bwd(R, inp):
        trace = hc_iterate_with_trace(inp["I"], inp["alpha"], n, validate=False)
        gI, ga = hc_iterate_backward(R, trace, inp["alpha"])
        return dict(I=gI, alpha=ga)

    return _op_check("hc_iterate", fwd, bwd, inputs, rng, fault)


def _diff_signs(m):
    return np.concatenate([np.sign(d).ravel() for d in L._forward_diffs(m)])


def check_smoothness_loss(rng, size, fault=False):
    m = rng.normal(size=(1, size, size, size))
    g = L.smoothness_loss_grad(m)
    return compare("smoothness_loss", dict(m=g), lambda: L.smoothness_loss(m), dict(m=m),
                   signature=lambda: _diff_signs(m), fault=fault)


def _spa_signature(hc, y, region, nb):
    P, Q = T.avg_pool3d(hc, region), T.avg_pool3d(y, region)
    out = []
    for off in L.half_offsets(nb):
        a, b = L._pair_slices(P.shape, off)
        dP = P[a] - P[b]
        out.append(np.sign(dP).ravel())
    return np.concatenate(out)


def check_spatial_consistency_loss(rng, size, fault=False):
    results = []
    for nb in L.NEIGHBORHOODS:
        hc = rng.uniform(0, 1, (1, size, size, size))
        y = rng.uniform(0, 1, (1, size, size, size))
        g = L.spatial_consistency_loss_grad(hc, y, 2, nb)
        results.append(compare(
            "spatial_consistency_loss", dict(hc=g),
            lambda: L.spatial_consistency_loss(hc, y, 2, nb), dict(hc=hc),
            signature=lambda: _spa_signature(hc, y, 2, nb), fault=fault,
        ))
    return _merge("spatial_consistency_loss", results)


def check_exposure_loss(rng, size, fault=False):
    hc = rng.uniform(0, 1, (1, size, size, size))
    g = L.exposure_loss_grad(hc, 3, 0.6)
    return compare("exposure_loss", dict(hc=g), lambda: L.exposure_loss(hc, 3, 0.6), dict(hc=hc), fault=fault)


def check_prior_loss(rng, size, fault=False):
    shape = (1, size, size, size)
    y = rng.uniform(0, 1, shape)
    x_hat = rng.uniform(0, 1, shape)
    b_hat = rng.uniform(0.05, 0.95, shape)
    w = 3.0
    gx, gb = L.fidelity_loss_grad(y, x_hat, b_hat)
    gb = gb + w * L.smoothness_loss_grad(b_hat)

    def sig():
        return np.concatenate([np.sign(y - x_hat * b_hat).ravel(), _diff_signs(b_hat)])

    return compare("prior_loss", dict(x_hat=gx, b_hat=gb),
                   lambda: L.prior_loss(y, x_hat, b_hat, w), dict(x_hat=x_hat, b_hat=b_hat),
                   signature=sig, fault=fault)


def _random_params(rng, arch, x, std=0.5, candidates=16):
    """Random parameters whose ReLU pre-activations on ``x`` sit as far from
    the kink as possible among ``candidates`` draws."""
    best, best_margin = None, -1.0
    for _ in range(candidates):
        params = network.init_params(0, arch)
        for t in params.tensors.values():
            t[...] = rng.normal(0.0, std, t.shape)
        _, cache = network.forward_with_cache(params, x)
        margin = min(float(np.abs(p).min()) for p in cache["pre"].values())
        if margin > best_margin:
            best, best_margin = params, margin
    return best


def check_network_forward(rng, size, fault=False):
    """Scalar sum(alpha**2) + sum(R * bias) w.r.t. every parameter."""
    arch = network.Architecture(channels=4, blocks=7)
    x = rng.uniform(0, 1, (1, 3, 3, 3))
    params = _random_params(rng, arch, x)
    R = rng.normal(size=x.shape)

    def f():
        maps = network.forward(params, x)
        return float(np.sum(maps.alpha ** 2) + np.sum(R * maps.bias))

    def sig():
        _, cache = network.forward_with_cache(params, x)
        return np.concatenate([(cache["pre"][j] > 0).ravel() for j in sorted(cache["pre"])])

    maps, cache = network.forward_with_cache(params, x)
    grads = network.backward(params, cache, 2.0 * maps.alpha, R)
    return compare("network_forward", grads, f, params.tensors, signature=sig, fault=fault)


def _pipeline_signature(params, ctx, cfg):
    from .optimizer import full_res_maps

    alpha, bias, cache = full_res_maps(params, ctx)
    hc = hc_iterate_with_trace(ctx.y, alpha, cfg.hc_iterations, validate=False)[-1]
    w = cfg.weights
    return np.concatenate(
        [(cache["pre"][j] > 0).ravel() for j in sorted(cache["pre"])]
        + [_diff_signs(alpha), _diff_signs(bias), np.sign(ctx.y - hc * bias).ravel(),
           _spa_signature(hc, ctx.y, w.spa_region, w.neighborhood)]
    )


def check_total_loss_alpha(rng, size=8, fault=False):
    """Composite loss w.r.t. the full-resolution alpha map (8^3 instance)."""
    shape = (1, 8, 8, 8)
    y = rng.uniform(0.05, 0.95, shape)
    alpha = rng.uniform(-0.9, 0.9, shape)
    b = rng.uniform(0.1, 0.9, shape)
    w = L.LossWeights(spa_region=2, exp_region=4)
    n = 4

    def f():
        hc = hc_iterate_with_trace(y, alpha, n, validate=False)[-1]
        return L.total_loss(y, hc, alpha, b, w).total

    def sig():
        hc = hc_iterate_with_trace(y, alpha, n, validate=False)[-1]
        return np.concatenate([_diff_signs(alpha), np.sign(y - hc * b).ravel(),
                               _spa_signature(hc, y, 2, 6)])

    trace = hc_iterate_with_trace(y, alpha, n, validate=False)
    g_hc, g_alpha, _ = L.total_loss_grad(y, trace[-1], alpha, b, w)
    _, g_alpha_hc = hc_iterate_backward(g_hc, trace, alpha)
    return compare("total_loss_alpha", dict(alpha=g_alpha + g_alpha_hc), f, dict(alpha=alpha),
                   signature=sig, fault=fault)


def check_end_to_end(rng, size=8, fault=False):
    """Full pipeline loss on a random 8^3 volume w.r.t. all network params."""
    cfg = CorrectionConfig(downsample_factor=4, channels=4,
                           weights=L.LossWeights(spa_region=2, exp_region=4))
    ctx = VolumeContext.from_unit_volume(rng.uniform(0.05, 0.95, (8, 8, 8)), cfg.downsample_factor)
    params = _random_params(rng, cfg.architecture, ctx.y_small, std=0.3)
    _, grads = loss_and_grads(params, ctx, cfg)
    return compare(
        "end_to_end", grads, lambda: loss_and_grads(params, ctx, cfg)[0].total, params.tensors,
        signature=lambda: _pipeline_signature(params, ctx, cfg), fault=fault,
    )


def _merge(name, results):
    return CheckResult(
        name,
        max(r.max_rel_error for r in results),
        sum(r.checked for r in results),
        sum(r.skipped for r in results),
    )


CHECKS = {
    "conv3d_depthwise": check_conv3d_depthwise,
    "conv3d_pointwise": check_conv3d_pointwise,
    "trilinear_resize": check_trilinear_resize,
    "avg_pool3d": check_avg_pool3d,
    "add": check_add,
    "mul": check_mul,
    "tanh": check_tanh,
    "sigmoid": check_sigmoid,
    "relu": check_relu,
    "abs": check_abs,
    "square": check_square,
    "hc_iterate": check_hc_iterate,
    "smoothness_loss": check_smoothness_loss,
    "spatial_consistency_loss": check_spatial_consistency_loss,
    "exposure_loss": check_exposure_loss,
    "prior_loss": check_prior_loss,
    "network_forward": check_network_forward,
    "total_loss_alpha": check_total_loss_alpha,
    "end_to_end": check_end_to_end,
}


def run_all(seed=0, size=6, fault=None):
    """Run every registered check once; ``fault`` names a check whose
    analytic gradient is deliberately corrupted (negative control)."""
    rng = np.random.default_rng(seed)
    return [fn(rng, size, fault=(name == fault)) for name, fn in CHECKS.items()]
