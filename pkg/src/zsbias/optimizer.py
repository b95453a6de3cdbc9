"""Adam and the per-volume online optimization loop."""
import logging
from dataclasses import dataclass

import numpy as np

from . import network
from . import tensor as T
from .errors import OptimizationDivergedError
from .homogeneity import hc_iterate_backward, hc_iterate_with_trace
from .losses import total_loss, total_loss_grad

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(
            step=0,
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


def adam_step(params, grads, state, lr, weight_decay=0.0, decoupled=False):
    """One Adam update with bias correction.

    Weight decay is coupled by default (``g += weight_decay * p`` before the
    moment updates); ``decoupled=True`` shrinks the parameters directly.
    Returns new ``(params, state)``; the inputs are left untouched.
    """
    step = state.step + 1
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise OptimizationDivergedError(step, f"non-finite gradient for {name}")
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        if decoupled:
            p = p - lr * weight_decay * p
        elif weight_decay:
            g = g + weight_decay * p
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        new_p[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(step, new_m, new_v, b1, b2, state.eps)
    return network.NetworkParams(params.arch, new_p), new_state


@dataclass
class VolumeContext:
    """Normalized full-resolution image and the network's downsampled view,
    both shaped ``(1, D, H, W)``."""

    y: np.ndarray
    y_small: np.ndarray

    @classmethod
    def from_unit_volume(cls, y, factor):
        y = T.as_tensor(y, 3, "volume")[None]
        small = tuple(max(n // f, 1) for n, f in zip(y.shape[1:], factor))
        return cls(y, T.trilinear_resize(y, small))


def full_res_maps(params, ctx):
    maps, cache = network.forward_with_cache(params, ctx.y_small)
    stacked = np.concatenate([maps.alpha, maps.bias])
    full = T.trilinear_resize(stacked, ctx.y.shape[1:])
    return full[:1], full[1:], cache


def loss_and_grads(params, ctx, cfg):
    """Forward the whole pipeline at ``params``; return the loss breakdown
    and the gradient of the weighted total for every parameter tensor."""
    alpha, bias, cache = full_res_maps(params, ctx)
    trace = hc_iterate_with_trace(ctx.y, alpha, cfg.hc_iterations, validate=False)
    hc = trace[-1]
    breakdown = total_loss(ctx.y, hc, alpha, bias, cfg.weights)
    g_hc, g_alpha, g_bias = total_loss_grad(ctx.y, hc, alpha, bias, cfg.weights)
    _, g_alpha_hc = hc_iterate_backward(g_hc, trace, alpha)
    g_maps = T.trilinear_resize_backward(
        np.concatenate([g_alpha + g_alpha_hc, g_bias]),
        (2,) + ctx.y_small.shape[1:],
    )
    grads = network.backward(params, cache, g_maps[:1], g_maps[1:])
    return breakdown, grads


def optimize(params, ctx, cfg):
    """Run ``cfg.opt_steps`` Adam iterations; return ``(params, trace)``.

    ``trace[k]`` is the loss breakdown evaluated before update ``k``.
    """
    state = AdamState.for_params(params)
    trace = []
    for step in range(1, cfg.opt_steps + 1):
        breakdown, grads = loss_and_grads(params, ctx, cfg)
        trace.append(breakdown)
        if not np.isfinite(breakdown.total):
            raise OptimizationDivergedError(step, "non-finite loss", trace)
        try:
            params, state = adam_step(
                params, grads, state, cfg.learning_rate, cfg.weight_decay,
                decoupled=cfg.decoupled_weight_decay,
            )
        except OptimizationDivergedError as exc:
            exc.trace = trace
            raise
        if step == 1 or step % 10 == 0:
            log.debug("step %d total %.6f", step, breakdown.total)
    return params, trace
