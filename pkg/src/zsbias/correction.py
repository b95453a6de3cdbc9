"""Zero-shot correction pipeline: normalize, optimize a fresh network on the
volume itself, apply the learned alpha map, map back to scanner units."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import network
from .config import CorrectionConfig
from .errors import DegenerateInputError, InvalidArgumentError
from .homogeneity import hc_iterate, hc_iterate_with_trace, hc_step  # noqa: F401
from .optimizer import VolumeContext, full_res_maps, optimize
from .volume_io import Volume

log = logging.getLogger(__name__)

LOW_PERCENTILE = 0.5
HIGH_PERCENTILE = 99.5
MIN_RECOMMENDED_EXTENT = 16


@dataclass
class NormStats:
    low: float
    high: float
    original_dtype: str = "float32"

    def __post_init__(self):
        if not self.high > self.low:
            raise InvalidArgumentError(f"high ({self.high}) must exceed low ({self.low})")


def normalize(volume):
    """Clip at the 0.5/99.5 percentiles and map ``[low, high]`` to ``[0, 1]``."""
    data = volume.data
    if not np.isfinite(data).all():
        raise InvalidArgumentError("volume contains NaN or Inf")
    low, high = np.percentile(data, [LOW_PERCENTILE, HIGH_PERCENTILE])
    if not high > low:
        raise DegenerateInputError("volume intensities are (nearly) constant; nothing to correct")
    stats = NormStats(float(low), float(high), volume.dtype)
    return (np.clip(data, low, high) - low) / (high - low), stats


def denormalize(unit, stats):
    """Inverse affine map only; clipped tails are not restored."""
    return unit * (stats.high - stats.low) + stats.low


@dataclass
class CorrectionResult:
    corrected: Volume
    bias: Volume
    loss_trace: list
    elapsed_seconds: float
    config: CorrectionConfig
    params: network.NetworkParams = None
    warnings: list = field(default_factory=list)

    def trace_dicts(self):
        """JSON-ready trace: one record per step, loss before that update."""
        return [{"step": k, **b.to_dict()} for k, b in enumerate(self.loss_trace)]


def correct_volume(volume, cfg=None):
    cfg = cfg or CorrectionConfig()
    start = time.perf_counter()
    warnings = []
    if min(volume.shape) < MIN_RECOMMENDED_EXTENT:
        msg = f"volume shape {volume.shape} is below {MIN_RECOMMENDED_EXTENT} voxels on some axis"
        log.warning(msg)
        warnings.append(msg)

    unit, stats = normalize(volume)
    ctx = VolumeContext.from_unit_volume(unit, cfg.downsample_factor)
    params = network.init_params(cfg.seed, cfg.architecture)
    params, trace = optimize(params, ctx, cfg)

    alpha, bias, _ = full_res_maps(params, ctx)
    x_hat = hc_iterate(ctx.y, alpha, cfg.hc_iterations, validate=False)[0]
    return CorrectionResult(
        corrected=volume.with_data(denormalize(x_hat, stats)),
        bias=volume.with_data(bias[0]),
        loss_trace=trace,
        elapsed_seconds=time.perf_counter() - start,
        config=cfg,
        params=params,
        warnings=warnings,
    )
