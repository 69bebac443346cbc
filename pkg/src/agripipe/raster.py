"""Raster containers and the MSR interchange format.

MSR layout (all integers little-endian)::

    b"MSRA" | u16 version=1 | u32 width | u32 height | u8 band_count
    | band_count x u8 kind
    | per band: width*height float32 (row-major), then width*height u8 validity

Kind bytes 0-4 are spectral bands, 5-9 are vegetation-index planes.
"""

from __future__ import annotations

import datetime as dt
import re
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import (
    DuplicateBand,
    InvalidDate,
    InvalidTime,
    IoFailure,
    MalformedHeader,
    NonFiniteValueWithValidFlag,
    PatternMismatch,
    TruncatedPayload,
    UnknownProduct,
)

MAGIC = b"MSRA"
VERSION = 1
_HEADER = struct.Struct("<4sHIIB")


class BandKind(IntEnum):
    RED = 0
    GREEN = 1
    BLUE = 2
    NIR = 3
    RED_EDGE = 4

    @property
    def label(self) -> str:
        return _BAND_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "BandKind":
        for kind, name in _BAND_LABELS.items():
            if name.lower() == label.lower():
                return kind
        raise ValueError(f"unknown band kind {label!r}")


_BAND_LABELS = {
    BandKind.RED: "Red",
    BandKind.GREEN: "Green",
    BandKind.BLUE: "Blue",
    BandKind.NIR: "NIR",
    BandKind.RED_EDGE: "RedEdge",
}


class IndexKind(IntEnum):
    """Vegetation-index planes; values are their MSR kind tags."""

    NDVI = 5
    GNDVI = 6
    EVI = 7
    SAVI = 8
    MSAVI = 9

    @property
    def label(self) -> str:
        return self.name


ChannelKind = Union[BandKind, IndexKind]


def kind_from_tag(tag: int) -> ChannelKind:
    if 0 <= tag <= 4:
        return BandKind(tag)
    if 5 <= tag <= 9:
        return IndexKind(tag)
    raise MalformedHeader(f"unknown band kind tag {tag}")


@dataclass(frozen=True, eq=False)
class Band:
    """One planar channel. ``values`` is (height, width) float32.

    Arrays are copied and frozen on construction; invalid pixels always carry 0.0.
    """

    kind: ChannelKind
    values: np.ndarray
    valid: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"band values must be a non-empty 2-D array, got shape {values.shape}")
        if self.valid is None:
            valid = np.ones(values.shape, dtype=bool)
        else:
            valid = np.array(self.valid, dtype=bool)
        if valid.shape != values.shape:
            raise ValueError(f"mask shape {valid.shape} != values shape {values.shape}")
        if not np.all(np.isfinite(values[valid])):
            raise NonFiniteValueWithValidFlag(f"{_kind_label(self.kind)}: non-finite value on a valid pixel")
        values[~valid] = 0.0
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def replace(self, values=None, valid=None) -> "Band":
        return Band(
            self.kind,
            self.values if values is None else values,
            self.valid if valid is None else valid,
        )

    def equals(self, other: "Band") -> bool:
        """Bitwise equality on kind, mask, and values at valid pixels."""
        if self.kind != other.kind or self.shape != other.shape:
            return False
        if not np.array_equal(self.valid, other.valid):
            return False
        a = np.where(self.valid, self.values, 0).view(np.uint32)
        b = np.where(other.valid, other.values, 0).view(np.uint32)
        return bool(np.array_equal(a, b))


def _kind_label(kind) -> str:
    return getattr(kind, "label", str(kind))


@dataclass(frozen=True)
class CaptureMeta:
    date: dt.date
    area_id: str
    time: dt.time
    product: str
    ext: str = "tif"


@dataclass(frozen=True)
class GeoRef:
    lat: float
    lon: float
    altitude: float


@dataclass(frozen=True, eq=False)
class MultispectralImage:
    bands: tuple[Band, ...]
    capture_meta: Optional[CaptureMeta] = None
    georef: Optional[GeoRef] = None

    def __post_init__(self):
        bands = tuple(self.bands)
        if not bands:
            raise ValueError("image needs at least one band")
        seen = set()
        for band in bands:
            if band.kind in seen:
                raise DuplicateBand(f"band {_kind_label(band.kind)} appears twice")
            seen.add(band.kind)
            if band.shape != bands[0].shape:
                raise ValueError("all bands must share dimensions")
        object.__setattr__(self, "bands", bands)

    @property
    def width(self) -> int:
        return self.bands[0].width

    @property
    def height(self) -> int:
        return self.bands[0].height

    @property
    def shape(self) -> tuple[int, int]:
        return self.bands[0].shape

    @property
    def kinds(self) -> tuple[ChannelKind, ...]:
        return tuple(b.kind for b in self.bands)

    def has(self, kind: ChannelKind) -> bool:
        return kind in self.kinds

    def band(self, kind: ChannelKind) -> Band:
        for b in self.bands:
            if b.kind == kind:
                return b
        raise KeyError(kind)

    def with_bands(self, bands: Iterable[Band]) -> "MultispectralImage":
        return MultispectralImage(tuple(bands), self.capture_meta, self.georef)

    def equals(self, other: "MultispectralImage") -> bool:
        return len(self.bands) == len(other.bands) and all(
            a.equals(b) for a, b in zip(self.bands, other.bands)
        )


def write_raster(image: MultispectralImage, path) -> None:
    """Write ``image`` in MSR format. Invalid pixels are stored as 0.0."""
    path = Path(path)
    height, width = image.shape
    parts = [
        _HEADER.pack(MAGIC, VERSION, width, height, len(image.bands)),
        bytes(int(b.kind) for b in image.bands),
    ]
    for band in image.bands:
        payload = np.where(band.valid, band.values, np.float32(0.0)).astype("<f4")
        parts.append(payload.tobytes(order="C"))
        parts.append(band.valid.astype(np.uint8).tobytes(order="C"))
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_raster(path) -> MultispectralImage:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise MalformedHeader(f"{path}: file shorter than header")
    magic, version, width, height, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeader(f"{path}: unsupported version {version}")
    if width == 0 or height == 0 or count == 0:
        raise MalformedHeader(f"{path}: empty raster ({width}x{height}, {count} bands)")
    offset = _HEADER.size
    if len(data) < offset + count:
        raise TruncatedPayload(f"{path}: band table cut short")
    kinds = [kind_from_tag(t) for t in data[offset:offset + count]]
    if len(set(kinds)) != len(kinds):
        raise DuplicateBand(f"{path}: duplicate band kinds {[_kind_label(k) for k in kinds]}")
    offset += count

    n = width * height
    per_band = 5 * n
    expected = offset + count * per_band
    if len(data) < expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise MalformedHeader(f"{path}: {len(data) - expected} trailing bytes")

    bands = []
    for kind in kinds:
        values = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(height, width)
        offset += 4 * n
        flags = np.frombuffer(data, dtype=np.uint8, count=n, offset=offset).reshape(height, width)
        offset += n
        if np.any(flags > 1):
            raise MalformedHeader(f"{path}: validity bytes must be 0 or 1")
        bands.append(Band(kind, values.astype(np.float32), flags.astype(bool)))
    return MultispectralImage(tuple(bands))


CLASS_NAMES = ("background", "crop", "weed")


def as_label_mask(labels, shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Validate and return a (height, width) uint8 mask with values in {0, 1, 2}."""
    mask = np.asarray(labels)
    if mask.ndim != 2:
        raise ValueError(f"label mask must be 2-D, got shape {mask.shape}")
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"label mask shape {mask.shape} != raster shape {tuple(shape)}")
    if mask.size and (mask.min() < 0 or mask.max() > 2):
        raise ValueError("label values must be 0 (background), 1 (crop) or 2 (weed)")
    return mask.astype(np.uint8, copy=False)


_CAPTURE_RE = re.compile(r"^(\d{8})_([A-Za-z0-9]+)_(\d{4})_([A-Za-z]+)\.([A-Za-z0-9]+)$")
PRODUCTS = ("RGB", "NIR", "RedEdge")


def parse_capture_filename(name: str) -> CaptureMeta:
    """Split ``YYYYMMDD_AREA_HHMM_PRODUCT.ext`` into its parts.

    >>> parse_capture_filename("20240423_E2_1230_RGB.tif").area_id
    'E2'
    """
    m = _CAPTURE_RE.match(Path(name).name)
    if m is None:
        raise PatternMismatch(f"{name!r} does not look like YYYYMMDD_AREA_HHMM_PRODUCT.ext")
    date_s, area, time_s, product, ext = m.groups()
    try:
        date = dt.date(int(date_s[:4]), int(date_s[4:6]), int(date_s[6:]))
    except ValueError as exc:
        raise InvalidDate(f"{date_s}: {exc}") from exc
    try:
        time = dt.time(int(time_s[:2]), int(time_s[2:]))
    except ValueError as exc:
        raise InvalidTime(f"{time_s}: {exc}") from exc
    if product not in PRODUCTS:
        raise UnknownProduct(f"{product!r} not in {PRODUCTS}")
    return CaptureMeta(date, area, time, product, ext)


def format_capture_filename(meta: CaptureMeta) -> str:
    return f"{meta.date:%Y%m%d}_{meta.area_id}_{meta.time:%H%M}_{meta.product}.{meta.ext}"
