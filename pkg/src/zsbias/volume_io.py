"""NIfTI-1 volumes and label masks.

Data is used exactly as stored: no reorientation, no resampling.
Intensities are written as float32 NIfTI-1 (masks as int16) with
``scl_slope = 1`` and ``scl_inter = 0``. Header geometry (affine and voxel
spacing) is stored as float32, so round trips are bit-exact for
float32-representable geometry. Paths ending in ``.gz`` are
gzip-compressed with a zero timestamp, so identical volumes give identical
bytes.
"""
import gzip
import os
from dataclasses import dataclass, field

import nibabel as nib
import numpy as np

from .errors import (
    InvalidArgumentError,
    MalformedHeaderError,
    MaskError,
    NotThreeDError,
    UnsupportedDtypeError,
    VolumeIOError,
    VolumeNotFoundError,
)

_SUPPORTED_KINDS = "iuf"


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))
    dtype: str = "float32"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.data.ndim != 3:
            raise InvalidArgumentError(f"volume data must be 3-D, got shape {self.data.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise InvalidArgumentError(f"spacing must be 3 positive values, got {self.spacing}")
        if self.affine.shape != (4, 4) or not np.array_equal(self.affine[3], [0, 0, 0, 1]):
            raise InvalidArgumentError("affine must be 4x4 with last row (0, 0, 0, 1)")

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data):
        """Same geometry, new intensities."""
        return Volume(data, self.spacing, self.affine.copy(), self.dtype)


@dataclass
class LabelMask:
    data: np.ndarray
    label_names: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise MaskError(f"mask must be 3-D, got shape {self.data.shape}")
        if self.data.size and self.data.min() < 0:
            raise MaskError("mask labels must be >= 0")
        self.data = self.data.astype(np.int32)
        self.label_names = {int(k): str(v) for k, v in self.label_names.items()}

    @property
    def shape(self):
        return self.data.shape

    def labels(self):
        return sorted(self.label_names) or [int(v) for v in np.unique(self.data) if v > 0]

    def name(self, label):
        return self.label_names.get(label, f"label{label}")


def _load(path):
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise VolumeNotFoundError(f"no such file: {path}")
    try:
        img = nib.load(path)
    except Exception as exc:  # nibabel raises a zoo of types here
        raise MalformedHeaderError(f"cannot parse NIfTI header of {path}: {exc}") from exc
    if not isinstance(img, nib.Nifti1Image) or isinstance(img, nib.Nifti2Image):
        raise MalformedHeaderError(f"{path} is not a NIfTI-1 image")
    if len(img.shape) != 3:
        raise NotThreeDError(f"{path} has shape {img.shape}; expected a 3-D scalar volume")
    dtype = img.get_data_dtype()
    if dtype.kind not in _SUPPORTED_KINDS or dtype.names is not None:
        raise UnsupportedDtypeError(f"{path} has unsupported data type {dtype}")
    return img


def read_volume(path):
    img = _load(path)
    try:
        data = np.asarray(img.get_fdata(dtype=np.float64))
    except Exception as exc:
        raise VolumeIOError(f"cannot read voxel data of {path}: {exc}") from exc
    hdr = img.header
    return Volume(
        data=data,
        spacing=tuple(float(z) for z in hdr.get_zooms()[:3]),
        affine=np.asarray(img.affine, dtype=np.float64),
        dtype=str(img.get_data_dtype()),
    )


def _to_bytes(volume, dtype):
    img = nib.Nifti1Image(volume.data.astype(dtype), volume.affine)
    hdr = img.header
    hdr.set_zooms(volume.spacing)
    hdr.set_slope_inter(1.0, 0.0)
    hdr.set_xyzt_units("mm")
    return img.to_bytes()


def write_volume(volume, path, dtype=np.float32):
    path = os.fspath(path)
    payload = _to_bytes(volume, dtype)
    if path.endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise VolumeIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_mask(path, label_spec=None, reference=None):
    """Read an integer label volume.

    ``label_spec`` maps label -> name; any non-zero label not in it is an
    error. ``reference`` (a Volume) enforces a matching shape.
    """
    vol = read_volume(path)
    data = vol.data
    if not np.array_equal(data, np.round(data)):
        raise MaskError(f"{path} holds non-integer values; not a label mask")
    if data.min() < 0:
        raise MaskError(f"{path} holds negative labels")
    if reference is not None and reference.shape != data.shape:
        raise MaskError(f"mask shape {data.shape} does not match volume shape {reference.shape}")
    labels = [int(v) for v in np.unique(data) if v > 0]
    if label_spec is not None:
        spec = {int(k): str(v) for k, v in label_spec.items()}
        unknown = [lab for lab in labels if lab not in spec]
        if unknown:
            raise MaskError(f"{path} contains label(s) {unknown} absent from the label spec")
    else:
        spec = {lab: f"label{lab}" for lab in labels}
    return LabelMask(data.astype(np.int32), spec)


def write_mask(mask, path, like=None):
    like = like or Volume(np.zeros(mask.shape))
    write_volume(like.with_data(mask.data), path, dtype=np.int16)
