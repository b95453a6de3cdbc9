"""Light-weight U-shaped CNN of depthwise-separable 3D convolution blocks.

Each block is ``relu(pointwise(depthwise(x)))``. With ``blocks = 2m + 1`` the
first ``m + 1`` blocks run straight through; each later block ``j`` consumes
``concat(out[2(m+1) - j], out[j - 1])`` so the skips mirror around the
middle block. For the default seven blocks:

    block5 <- concat(out3, out4)
    block6 <- concat(out2, out5)
    block7 <- concat(out1, out6)

A pointwise head maps block 7 to two channels: channel 0 goes through
``tanh`` (the alpha map), channel 1 through ``sigmoid`` (the bias map).

Flat parameter dumps are little-endian float32 in ``NetworkParams.tensors``
insertion order: for each block ``dw.weight (C,3,3,3)``, ``dw.bias (C,)``,
``pw.weight (Cout,Cin)``, ``pw.bias (Cout,)``; then ``head.weight (2,C)``
and ``head.bias (2,)``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import InvalidArgumentError

INIT_STD = 0.02


@dataclass(frozen=True)
class Architecture:
    channels: int = 8
    blocks: int = 7

    def __post_init__(self):
        if self.channels < 1:
            raise InvalidArgumentError(f"channels must be >= 1, got {self.channels}")
        if self.blocks < 1 or self.blocks % 2 == 0:
            raise InvalidArgumentError(f"blocks must be a positive odd number, got {self.blocks}")

    @property
    def depth(self):
        return (self.blocks - 1) // 2

    def sources(self, j):
        """1-based block outputs feeding block ``j`` (0 means the input)."""
        m = self.depth
        if j <= m + 1:
            return (j - 1,)
        return (2 * (m + 1) - j, j - 1)

    def in_channels(self, j):
        return sum(1 if s == 0 else self.channels for s in self.sources(j))


@dataclass
class NetworkParams:
    arch: Architecture
    tensors: dict = field(default_factory=dict)

    def count(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def to_flat(self):
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def load_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.count():
            raise InvalidArgumentError(f"expected {self.count()} values, got {flat.size}")
        out, pos = {}, 0
        for name, t in self.tensors.items():
            out[name] = flat[pos:pos + t.size].reshape(t.shape).copy()
            pos += t.size
        return NetworkParams(self.arch, out)


@dataclass
class ParametricMaps:
    alpha: np.ndarray
    bias: np.ndarray
    resolution: str = "downsampled"


def init_params(seed, arch=None):
    """Gaussian(0, 0.02) hidden weights; zero head and zero biases.

    The zero head makes the first forward pass return ``alpha == 0`` and
    ``bias == 0.5`` everywhere, so the correction starts as the identity.
    """
    arch = arch or Architecture()
    rng = np.random.default_rng(seed)
    C = arch.channels
    tensors = {}
    for j in range(1, arch.blocks + 1):
        cin = arch.in_channels(j)
        tensors[f"block{j}.dw.weight"] = rng.normal(0.0, INIT_STD, (cin, 3, 3, 3))
        tensors[f"block{j}.dw.bias"] = np.zeros(cin)
        tensors[f"block{j}.pw.weight"] = rng.normal(0.0, INIT_STD, (C, cin))
        tensors[f"block{j}.pw.bias"] = np.zeros(C)
    tensors["head.weight"] = np.zeros((2, C))
    tensors["head.bias"] = np.zeros(2)
    return NetworkParams(arch, tensors)


def parameter_count(arch=None):
    arch = arch or Architecture()
    C, total = arch.channels, 0
    for j in range(1, arch.blocks + 1):
        cin = arch.in_channels(j)
        total += cin * 27 + cin + C * cin + C
    return total + 2 * C + 2


def forward_with_cache(params, x):
    """Run the network on ``x`` of shape ``(1, d, h, w)``.

    Returns ``(maps, cache)``; ``cache`` feeds :func:`backward`.
    """
    x = T.check_finite(T.as_tensor(x, 4, "network input"), "network input")
    if x.shape[0] != 1:
        raise InvalidArgumentError(f"network input must have one channel, got {x.shape[0]}")
    arch, p = params.arch, params.tensors
    outs = [x]
    cache = {"inputs": {}, "dw": {}, "pre": {}}
    for j in range(1, arch.blocks + 1):
        srcs = arch.sources(j)
        inp = outs[srcs[0]] if len(srcs) == 1 else np.concatenate([outs[s] for s in srcs])
        hidden = T.conv3d_depthwise(inp, p[f"block{j}.dw.weight"], p[f"block{j}.dw.bias"])
        pre = T.conv3d_pointwise(hidden, p[f"block{j}.pw.weight"], p[f"block{j}.pw.bias"])
        cache["inputs"][j], cache["dw"][j], cache["pre"][j] = inp, hidden, pre
        outs.append(T.relu(pre))
    head = T.conv3d_pointwise(outs[-1], p["head.weight"], p["head.bias"])
    alpha = T.tanh(head[:1])
    bias = T.sigmoid(head[1:])
    cache["outs"] = outs
    cache["alpha"], cache["bias"] = alpha, bias
    return ParametricMaps(alpha, bias), cache


def forward(params, x):
    return forward_with_cache(params, x)[0]


def backward(params, cache, grad_alpha, grad_bias):
    """Gradients of a scalar loss w.r.t. every tensor in ``params``."""
    arch, p = params.arch, params.tensors
    outs = cache["outs"]
    grads = {}
    g_head = np.concatenate([
        T.tanh_backward(grad_alpha, cache["alpha"]),
        T.sigmoid_backward(grad_bias, cache["bias"]),
    ])
    g_last, grads["head.weight"], grads["head.bias"] = T.conv3d_pointwise_backward(
        g_head, outs[-1], p["head.weight"]
    )
    g_outs = {arch.blocks: g_last}
    for j in range(arch.blocks, 0, -1):
        g_out = g_outs.pop(j)
        g_pre = T.relu_backward(g_out, cache["pre"][j])
        g_hidden, grads[f"block{j}.pw.weight"], grads[f"block{j}.pw.bias"] = (
            T.conv3d_pointwise_backward(g_pre, cache["dw"][j], p[f"block{j}.pw.weight"])
        )
        g_in, grads[f"block{j}.dw.weight"], grads[f"block{j}.dw.bias"] = (
            T.conv3d_depthwise_backward(g_hidden, cache["inputs"][j], p[f"block{j}.dw.weight"])
        )
        start = 0
        for s in arch.sources(j):
            width = outs[s].shape[0]
            if s > 0:
                piece = g_in[start:start + width]
                g_outs[s] = g_outs[s] + piece if s in g_outs else piece
            start += width
    return {name: grads[name] for name in p}


def dump_params(params, path):
    params.to_flat().astype("<f4").tofile(path)


def load_params(path, arch=None):
    template = init_params(0, arch)
    return template.load_flat(np.fromfile(path, dtype="<f4").astype(np.float64))
