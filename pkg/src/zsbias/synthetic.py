"""Ground-truth phantoms, smooth multiplicative bias fields and the forward
corruption ``Y = X * B + noise``."""
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError
from .volume_io import LabelMask, Volume

DEFAULT_SHAPE = (64, 64, 64)
TISSUE_NAMES_3 = {1: "CSF", 2: "GM", 3: "WM"}


@dataclass
class PhantomSpec:
    """Nested ellipsoids, outermost = label 1.

    Semi-axes of the outer ellipsoid are drawn from ``semi_axes_range``
    (fraction of each half-extent); tissue ``t`` uses them scaled by
    ``shell_scales[t]``. The shared centre is jittered by up to
    ``center_jitter`` of each half-extent.
    """

    shape: tuple = DEFAULT_SHAPE
    tissue_intensities: tuple = (0.3, 0.6, 0.9)
    semi_axes_range: tuple = (0.75, 0.9)
    shell_scales: tuple = (1.0, 0.65, 0.35)
    center_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.tissue_intensities = tuple(float(v) for v in self.tissue_intensities)
        self.shell_scales = tuple(float(v) for v in self.shell_scales)
        self.semi_axes_range = tuple(float(v) for v in self.semi_axes_range)
        v = self.tissue_intensities
        if len(self.shape) != 3 or min(self.shape) < 16:
            raise InvalidArgumentError(f"phantom extents must be >= 16, got {self.shape}")
        if not v or min(v) <= 0 or max(v) >= 1 or any(a >= b for a, b in zip(v, v[1:])):
            raise InvalidArgumentError("tissue intensities must be strictly increasing in (0, 1)")
        s = self.shell_scales
        if len(s) != len(v) or any(a <= b for a, b in zip(s, s[1:])) or min(s) <= 0:
            raise InvalidArgumentError("need one strictly decreasing positive shell scale per tissue")
        lo, hi = self.semi_axes_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError(f"invalid semi-axes range {self.semi_axes_range}")

    def label_names(self):
        n = len(self.tissue_intensities)
        return dict(TISSUE_NAMES_3) if n == 3 else {t: f"tissue{t}" for t in range(1, n + 1)}

    def to_dict(self):
        return asdict(self)


@dataclass
class BiasSpec:
    """``n_bumps`` Gaussian bumps with widths (std) drawn from
    ``width_range`` as a fraction of each extent; rescaled to
    ``[1 - strength, 1 + strength]`` and then divided by its mean."""

    strength: float = 0.3
    n_bumps: int = 4
    width_range: tuple = (0.25, 0.5)
    seed: int = 0

    def __post_init__(self):
        self.width_range = tuple(float(v) for v in self.width_range)
        if not 0 <= self.strength < 1:
            raise InvalidArgumentError(f"bias strength must lie in [0, 1), got {self.strength}")
        if self.n_bumps < 1:
            raise InvalidArgumentError("n_bumps must be >= 1")
        lo, hi = self.width_range
        if not 0 < lo <= hi:
            raise InvalidArgumentError(f"invalid width range {self.width_range}")

    def to_dict(self):
        return asdict(self)


def _grid(shape):
    """Per-axis coordinates normalized to [-1, 1] across each extent."""
    axes = [(np.arange(n) - (n - 1) / 2) / (n / 2) for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def make_phantom(spec=None):
    spec = spec or PhantomSpec()
    rng = np.random.default_rng(spec.seed)
    center = rng.uniform(-spec.center_jitter, spec.center_jitter, 3)
    axes = rng.uniform(*spec.semi_axes_range, 3)
    grid = _grid(spec.shape)
    labels = np.zeros(spec.shape, dtype=np.int32)
    for t, scale in enumerate(spec.shell_scales, start=1):
        r2 = sum(((g - c) / (a * scale)) ** 2 for g, c, a in zip(grid, center, axes))
        labels[r2 <= 1.0] = t
    counts = np.bincount(labels.ravel(), minlength=len(spec.shell_scales) + 1)
    empty = [t for t in range(1, len(counts)) if counts[t] == 0]
    if empty:
        raise InvalidArgumentError(f"phantom geometry leaves tissue(s) {empty} empty")
    lut = np.concatenate([[0.0], spec.tissue_intensities])
    return Volume(lut[labels]), LabelMask(labels, spec.label_names())


def make_bias_field(shape, spec=None):
    spec = spec or BiasSpec()
    shape = tuple(int(s) for s in shape)
    if spec.strength == 0:
        return Volume(np.ones(shape))
    rng = np.random.default_rng(spec.seed)
    coords = np.meshgrid(*[np.linspace(0.0, 1.0, n) for n in shape], indexing="ij")
    field = np.zeros(shape)
    for _ in range(spec.n_bumps):
        center = rng.uniform(0.0, 1.0, 3)
        width = rng.uniform(*spec.width_range)
        amp = rng.uniform(0.5, 1.0)
        r2 = sum((c - m) ** 2 for c, m in zip(coords, center))
        field += amp * np.exp(-r2 / (2.0 * width * width))
    span = field.max() - field.min()
    unit = (field - field.min()) / span if span > 0 else np.full(shape, 0.5)
    field = 1.0 - spec.strength + 2.0 * spec.strength * unit
    return Volume(field / field.mean())


def corrupt(clean, bias, noise_sigma=0.01, seed=0):
    if clean.shape != bias.shape:
        raise InvalidArgumentError(f"shape mismatch: {clean.shape} vs {bias.shape}")
    if noise_sigma < 0:
        raise InvalidArgumentError("noise_sigma must be >= 0")
    y = clean.data * bias.data
    if noise_sigma > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_sigma, y.shape)
    return clean.with_data(y)


@dataclass
class SyntheticCase:
    clean: Volume
    bias: Volume
    corrupted: Volume
    mask: LabelMask
    phantom_spec: PhantomSpec
    bias_spec: BiasSpec
    noise_sigma: float
    seed: int

    def spec_dict(self):
        return {
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "phantom": self.phantom_spec.to_dict(),
            "bias": self.bias_spec.to_dict(),
            "label_names": {str(k): v for k, v in self.mask.label_names.items()},
        }


def simulate(shape=DEFAULT_SHAPE, bias_strength=0.3, noise_sigma=0.01, seed=0):
    """Phantom, bias and noise seeded from ``seed``, ``seed + 1``, ``seed + 2``."""
    pspec = PhantomSpec(shape=shape, seed=seed)
    bspec = BiasSpec(strength=bias_strength, seed=seed + 1)
    clean, mask = make_phantom(pspec)
    bias = make_bias_field(clean.shape, bspec)
    corrupted = corrupt(clean, bias, noise_sigma, seed + 2)
    return SyntheticCase(clean, bias, corrupted, mask, pspec, bspec, noise_sigma, seed)
