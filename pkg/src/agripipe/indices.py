"""Vegetation indices and the 10-channel classification feature stack."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import MissingBand
from .raster import Band, BandKind, IndexKind, MultispectralImage, read_raster, write_raster

logger = logging.getLogger(__name__)

DENOMINATOR_EPS = 1e-12
EVI_CLIP = 2.5
DEFAULT_L = 0.5

BAND_ORDER = (BandKind.RED, BandKind.GREEN, BandKind.BLUE, BandKind.NIR, BandKind.RED_EDGE)
INDEX_ORDER = (IndexKind.NDVI, IndexKind.GNDVI, IndexKind.EVI, IndexKind.SAVI, IndexKind.MSAVI)
CHANNEL_ORDER = BAND_ORDER + INDEX_ORDER
N_CHANNELS = len(CHANNEL_ORDER)

REQUIRED_BANDS = {
    IndexKind.NDVI: (BandKind.NIR, BandKind.RED),
    IndexKind.GNDVI: (BandKind.NIR, BandKind.GREEN),
    IndexKind.EVI: (BandKind.NIR, BandKind.RED, BandKind.BLUE),
    IndexKind.SAVI: (BandKind.NIR, BandKind.RED),
    IndexKind.MSAVI: (BandKind.NIR, BandKind.RED),
}


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ok = np.abs(den) >= DENOMINATOR_EPS
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=ok)
    return out, ok


def index_values(kind: IndexKind, nir, red=None, green=None, blue=None, l_factor: float = DEFAULT_L):
    """Evaluate one index on float arrays. Returns (values, defined_mask)."""
    nir = np.asarray(nir, dtype=np.float64)
    if kind is IndexKind.NDVI:
        return _ratio(nir - red, nir + red)
    if kind is IndexKind.GNDVI:
        return _ratio(nir - green, nir + green)
    if kind is IndexKind.EVI:
        out, ok = _ratio(nir - red, nir + 6.0 * red - 7.5 * blue + 1.0)
        return np.clip(2.5 * out, -EVI_CLIP, EVI_CLIP), ok
    if kind is IndexKind.SAVI:
        out, ok = _ratio(nir - red, nir + red + l_factor)
        return out * (1.0 + l_factor), ok
    if kind is IndexKind.MSAVI:
        b = 2.0 * nir + 1.0
        # (2N+1)^2 - 8(N-R) == (2N-1)^2 + 8R, which cannot cancel catastrophically for R >= 0
        disc = (2.0 * nir - 1.0) ** 2 + 8.0 * np.asarray(red, dtype=np.float64)
        ok = disc >= 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        return (b - root) / 2.0, ok
    raise ValueError(f"unknown index {kind!r}")


def _require(image: MultispectralImage, kinds) -> list[Band]:
    missing = [k.label for k in kinds if not image.has(k)]
    if missing:
        raise MissingBand(f"missing bands {missing}")
    return [image.band(k) for k in kinds]


def _warn_range(image: MultispectralImage) -> None:
    for band in image.bands:
        if not isinstance(band.kind, BandKind) or not band.valid.any():
            continue
        v = band.values[band.valid]
        lo, hi = float(v.min()), float(v.max())
        if lo < 0.0 or hi > 1.0:
            logger.warning("%s reflectance outside [0, 1]: [%.4f, %.4f]", band.kind.label, lo, hi)


def compute_index(image: MultispectralImage, kind: IndexKind, l_factor: float = DEFAULT_L) -> Band:
    bands = _require(image, REQUIRED_BANDS[kind])
    arrays = {b.kind: b.values.astype(np.float64) for b in bands}
    valid = np.logical_and.reduce([b.valid for b in bands])
    values, defined = index_values(
        kind,
        arrays[BandKind.NIR],
        red=arrays.get(BandKind.RED),
        green=arrays.get(BandKind.GREEN),
        blue=arrays.get(BandKind.BLUE),
        l_factor=l_factor,
    )
    return Band(kind, values, valid & defined)


@dataclass(frozen=True, eq=False)
class FeatureStack:
    """(10, height, width) float32 planes in CHANNEL_ORDER plus a joint mask."""

    channels: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        if ch.ndim != 3 or ch.shape[0] != N_CHANNELS:
            raise ValueError(f"feature stack must be ({N_CHANNELS}, H, W), got {ch.shape}")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != ch.shape[1:]:
            raise ValueError("mask shape does not match channel planes")
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.channels.shape[1:]

    def plane(self, kind) -> np.ndarray:
        return self.channels[CHANNEL_ORDER.index(kind)]

    def to_image(self) -> MultispectralImage:
        return MultispectralImage(tuple(Band(k, self.channels[i], self.valid) for i, k in enumerate(CHANNEL_ORDER)))

    @classmethod
    def from_image(cls, image: MultispectralImage) -> "FeatureStack":
        bands = _require(image, CHANNEL_ORDER)
        valid = np.logical_and.reduce([b.valid for b in bands])
        return cls(np.stack([b.values for b in bands]), valid)

    def save(self, path) -> None:
        write_raster(self.to_image(), path)

    @classmethod
    def load(cls, path) -> "FeatureStack":
        return cls.from_image(read_raster(path))


def build_feature_stack(image: MultispectralImage, l_factor: float = DEFAULT_L) -> FeatureStack:
    bands = _require(image, BAND_ORDER)
    _warn_range(image)
    planes = list(bands) + [compute_index(image, k, l_factor) for k in INDEX_ORDER]
    valid = np.logical_and.reduce([p.valid for p in planes])
    channels = np.stack([np.where(valid, p.values, np.float32(0.0)) for p in planes])
    return FeatureStack(channels, valid)
