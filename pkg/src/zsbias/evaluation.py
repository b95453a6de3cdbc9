"""Per-tissue coefficient of variation and simulation-only fidelity metrics.

JSON report keys (stable)::

    created            ISO-8601 timestamp
    config             free-form echo of the run configuration
    tissues            list of {label, name, cv_original, cv_corrected, error}
    mean_cv_original   mean over tissues without errors (null if none)
    mean_cv_corrected  idem
    rmse_original      mean-matched RMSE of the original vs clean (or null)
    rmse_corrected     idem for the corrected image
    bias_correlation   Pearson r between original/corrected and the true bias
                       over the foreground (or null)
"""
import datetime as _dt
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError

MIN_DIVISOR = 1e-6
REPORT_KEYS = (
    "created", "config", "tissues", "mean_cv_original", "mean_cv_corrected",
    "rmse_original", "rmse_corrected", "bias_correlation",
)
TISSUE_KEYS = ("label", "name", "cv_original", "cv_corrected", "error")


def coefficient_of_variation(volume, mask, label):
    """Population std / mean of the intensities under ``label``."""
    data = volume if isinstance(volume, np.ndarray) else volume.data
    labels = mask if isinstance(mask, np.ndarray) else mask.data
    if data.shape != labels.shape:
        raise InvalidArgumentError(f"volume shape {data.shape} != mask shape {labels.shape}")
    values = data[labels == label].astype(np.float64)
    if values.size < 2:
        raise InvalidArgumentError(f"label {label} covers {values.size} voxel(s); need >= 2")
    mean = values.mean()
    if mean == 0:
        raise InvalidArgumentError(f"label {label} has zero mean intensity")
    return float(values.std() / abs(mean))


def mean_matched_rmse(image, clean, region):
    """RMSE over ``region`` after scaling ``image`` so its regional mean
    equals the clean image's (bias correction is defined up to a scale)."""
    a, b = image[region], clean[region]
    scale = b.mean() / a.mean()
    return float(np.sqrt(np.mean((a * scale - b) ** 2)))


def implicit_bias_correlation(original, corrected, true_bias, region):
    """Pearson r between ``original / corrected`` and the true bias."""
    denom = corrected[region]
    ok = np.abs(denom) >= MIN_DIVISOR
    ratio = original[region][ok] / denom[ok]
    truth = true_bias[region][ok]
    if ratio.size < 2 or ratio.std() == 0 or truth.std() == 0:
        return None
    r = float(np.corrcoef(ratio, truth)[0, 1])
    return max(-1.0, min(1.0, r))


@dataclass
class TissueEntry:
    label: int
    name: str
    cv_original: float = None
    cv_corrected: float = None
    error: str = None


@dataclass
class EvalReport:
    tissues: list
    rmse_original: float = None
    rmse_corrected: float = None
    bias_correlation: float = None
    config: dict = field(default_factory=dict)
    created: str = field(
        default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    )

    def _mean(self, key):
        vals = [getattr(t, key) for t in self.tissues if t.error is None]
        return float(np.mean(vals)) if vals else None

    @property
    def mean_cv_original(self):
        return self._mean("cv_original")

    @property
    def mean_cv_corrected(self):
        return self._mean("cv_corrected")

    def to_dict(self):
        return {
            "created": self.created,
            "config": self.config,
            "tissues": [asdict(t) for t in self.tissues],
            "mean_cv_original": self.mean_cv_original,
            "mean_cv_corrected": self.mean_cv_corrected,
            "rmse_original": self.rmse_original,
            "rmse_corrected": self.rmse_corrected,
            "bias_correlation": self.bias_correlation,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=2, **kw)

    def to_table(self):
        def fmt(v):
            return "-" if v is None else f"{v:.3f}"

        rows = [("Tissue", "Original", "Corrected")]
        for t in self.tissues:
            if t.error is None:
                rows.append((t.name, fmt(t.cv_original), fmt(t.cv_corrected)))
            else:
                rows.append((t.name, "error", t.error))
        rows.append(("mean", fmt(self.mean_cv_original), fmt(self.mean_cv_corrected)))
        if self.rmse_original is not None:
            rows.append(("RMSE", fmt(self.rmse_original), fmt(self.rmse_corrected)))
        if self.bias_correlation is not None:
            rows.append(("bias r", "", fmt(self.bias_correlation)))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines)


def evaluate_correction(original, corrected, mask, clean=None, true_bias=None, config=None):
    """CV per tissue for both images, plus fidelity metrics when the clean
    image (and optionally the true bias) are known. Per-tissue failures are
    recorded in the report instead of raised."""
    for name, vol in (("corrected", corrected), ("clean", clean), ("true_bias", true_bias)):
        if vol is not None and vol.shape != original.shape:
            raise InvalidArgumentError(f"{name} shape {vol.shape} != original shape {original.shape}")
    if mask.shape != original.shape:
        raise InvalidArgumentError(f"mask shape {mask.shape} != image shape {original.shape}")

    tissues = []
    for label in mask.labels():
        entry = TissueEntry(label, mask.name(label))
        try:
            entry.cv_original = coefficient_of_variation(original, mask, label)
            entry.cv_corrected = coefficient_of_variation(corrected, mask, label)
        except InvalidArgumentError as exc:
            entry.cv_original = entry.cv_corrected = None
            entry.error = str(exc)
        tissues.append(entry)

    report = EvalReport(tissues, config=dict(config or {}))
    foreground = mask.data > 0
    if clean is not None and foreground.any():
        report.rmse_original = mean_matched_rmse(original.data, clean.data, foreground)
        report.rmse_corrected = mean_matched_rmse(corrected.data, clean.data, foreground)
    if true_bias is not None and foreground.any():
        report.bias_correlation = implicit_bias_correlation(
            original.data, corrected.data, true_bias.data, foreground
        )
    return report
