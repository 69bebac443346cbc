"""Denoising, brightness standardization and reference-panel calibration."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DegenerateBand,
    EmptyBand,
    EmptyRegion,
    IoFailure,
    MissingBandFactor,
    ZeroBrightness,
)
from .raster import Band, BandKind, MultispectralImage

Rect = tuple[int, int, int, int]  # x0, y0, x1, y1 (half-open)


def median_filter(band: Band, radius: int = 1) -> Band:
    """Masked median over a (2r+1)^2 window with edge replication.

    Invalid pixels do not vote. A pixel whose whole window is invalid stays
    invalid. With an even number of valid neighbours the two middle values
    are averaged.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if not band.valid.any():
        raise EmptyBand(f"{band.kind!r}: no valid pixels")

    size = 2 * radius + 1
    vals = np.pad(band.values, radius, mode="edge")
    mask = np.pad(band.valid, radius, mode="edge")
    windows = sliding_window_view(np.where(mask, vals, np.inf), (size, size))
    windows = windows.reshape(band.height, band.width, size * size)
    counts = sliding_window_view(mask, (size, size)).sum(axis=(-2, -1))

    ordered = np.sort(windows, axis=-1)
    lo = np.clip((counts - 1) // 2, 0, None)[..., None]
    hi = np.clip(counts // 2, 0, size * size - 1)[..., None]
    a = np.take_along_axis(ordered, lo, axis=-1)[..., 0].astype(np.float64)
    b = np.take_along_axis(ordered, hi, axis=-1)[..., 0].astype(np.float64)
    valid = counts > 0
    out = np.where(valid, 0.5 * (a + b), 0.0)
    return Band(band.kind, out.astype(np.float32), valid)


@dataclass(frozen=True)
class NormalizationStats:
    mu: float
    sigma: float

    def restore(self, band: Band) -> Band:
        values = self.mu + self.sigma * band.values.astype(np.float64)
        return band.replace(values=values)


def normalize_band(band: Band) -> tuple[Band, NormalizationStats]:
    """Standardize valid pixels to zero mean and unit population std."""
    v = band.values[band.valid].astype(np.float64)
    if v.size < 2:
        raise DegenerateBand(f"{band.kind!r}: need at least 2 valid pixels, have {v.size}")
    mu = float(v.mean())
    sigma = float(v.std())
    if not sigma > 0:
        raise DegenerateBand(f"{band.kind!r}: zero variance")
    out = (band.values.astype(np.float64) - mu) / sigma
    return band.replace(values=out), NormalizationStats(mu, sigma)


@dataclass(frozen=True)
class CalibrationRecord:
    """Per-band panel reflectance and measured panel brightness.

    The calibration factor is always derived, never stored.
    """

    r_target: Mapping[BandKind, float]
    i_measured: Mapping[BandKind, float]

    def __post_init__(self):
        if set(self.r_target) != set(self.i_measured):
            raise ValueError("r_target and i_measured must cover the same bands")
        for kind in self.r_target:
            r, i = self.r_target[kind], self.i_measured[kind]
            if not 0 < r <= 1:
                raise ValueError(f"{kind.label}: panel reflectance {r} outside (0, 1]")
            if not i > 0:
                raise ZeroBrightness(f"{kind.label}: measured brightness {i} <= 0")

    @property
    def kinds(self) -> tuple[BandKind, ...]:
        return tuple(sorted(self.r_target))

    def factor(self, kind: BandKind) -> float:
        try:
            return self.r_target[kind] / self.i_measured[kind]
        except KeyError:
            raise MissingBandFactor(f"no calibration factor for {kind.label}") from None

    @property
    def c_calibration(self) -> dict[BandKind, float]:
        return {k: self.factor(k) for k in self.kinds}

    def dumps(self) -> str:
        lines = []
        for kind in self.kinds:
            lines.append(f"band.{kind.label}.r_target={self.r_target[kind]!r}")
            lines.append(f"band.{kind.label}.i_measured={self.i_measured[kind]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CalibrationRecord":
        r_target, i_measured = {}, {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            parts = key.strip().split(".")
            if len(parts) != 3 or parts[0] != "band" or parts[2] not in ("r_target", "i_measured"):
                raise ValueError(f"unrecognised calibration key {key!r}")
            kind = BandKind.from_label(parts[1])
            (r_target if parts[2] == "r_target" else i_measured)[kind] = float(value)
        return cls(r_target, i_measured)

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "CalibrationRecord":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc


def derive_calibration(
    panel_capture: Union[MultispectralImage, Sequence[MultispectralImage]],
    panel_region: Rect,
    r_target: Union[float, Mapping[BandKind, float]],
) -> CalibrationRecord:
    """Measure the panel brightness per band and pair it with its known reflectance.

    Several panel captures may be passed; their per-capture region means are
    averaged with equal weight.
    """
    captures = [panel_capture] if isinstance(panel_capture, MultispectralImage) else list(panel_capture)
    if not captures:
        raise EmptyRegion("no panel captures given")
    x0, y0, x1, y1 = panel_region
    kinds = [k for k in captures[0].kinds if isinstance(k, BandKind)]
    if isinstance(r_target, Mapping):
        targets = {k: float(r_target[k]) for k in kinds if k in r_target}
        missing = [k.label for k in kinds if k not in r_target]
        if missing:
            raise MissingBandFactor(f"no target reflectance for {missing}")
    else:
        targets = {k: float(r_target) for k in kinds}

    measured = {}
    for kind in kinds:
        means = []
        for cap in captures:
            h, w = cap.shape
            if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                raise EmptyRegion(f"panel region {panel_region} empty or outside {w}x{h} image")
            band = cap.band(kind)
            sel = band.valid[y0:y1, x0:x1]
            if not sel.any():
                raise EmptyRegion(f"{kind.label}: no valid pixels in panel region")
            means.append(float(band.values[y0:y1, x0:x1][sel].astype(np.float64).mean()))
        mean = float(np.mean(means))
        if not mean > 0:
            raise ZeroBrightness(f"{kind.label}: mean panel brightness {mean} <= 0")
        measured[kind] = mean
    return CalibrationRecord(targets, measured)


def apply_calibration(image: MultispectralImage, record: CalibrationRecord) -> MultispectralImage:
    """Scale every spectral band by its calibration factor; index planes pass through."""
    bands = []
    for band in image.bands:
        if isinstance(band.kind, BandKind):
            factor = record.factor(band.kind)
            band = band.replace(values=band.values.astype(np.float64) * factor)
        bands.append(band)
    return image.with_bands(bands)
