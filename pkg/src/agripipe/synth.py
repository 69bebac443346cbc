"""Deterministic synthetic field: crop rows on soil with elliptical weed patches.

Reflectance profiles and sensor gains are fixed here so downstream numbers
stay stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SizeTooSmall
from .raster import Band, BandKind, MultispectralImage

MIN_SIZE = 512

# reflectance per class, in BandKind order (R, G, B, NIR, RedEdge)
SOIL = (0.30, 0.14, 0.18, 0.34, 0.28)
CROP = (0.12, 0.24, 0.06, 0.50, 0.40)
WEED = (0.04, 0.36, 0.05, 0.62, 0.46)
PROFILES = np.array([SOIL, CROP, WEED])

# raw brightness = reflectance * gain; calibration has to undo this
SENSOR_GAIN = (0.80, 0.90, 0.70, 1.25, 1.10)

NOISE_SIGMA = 0.02
IMPULSE_FRACTION = 0.001

PANEL_SIZE = 64
PANEL_REGION = (16, 16, 48, 48)
PANEL_REFLECTANCE = 0.5


@dataclass(frozen=True)
class FieldLayout:
    row_period: float = 28.0
    row_width: float = 9.0
    max_row_angle_deg: float = 10.0
    weeds_per_megapixel: float = 100.0
    weed_major: tuple[float, float] = (6.0, 16.0)
    weed_minor: tuple[float, float] = (4.0, 10.0)


def _noisy_capture(reflectance: np.ndarray, rng: np.random.Generator) -> MultispectralImage:
    """Add sensor noise to (5, H, W) reflectance and convert to raw brightness."""
    noisy = reflectance + rng.normal(0.0, NOISE_SIGMA, size=reflectance.shape)
    hits = rng.random(reflectance.shape) < IMPULSE_FRACTION
    salt = rng.random(reflectance.shape) < 0.5
    noisy = np.where(hits, np.where(salt, 1.0, 0.0), noisy)
    noisy = np.clip(noisy, 0.0, 1.0)
    raw = noisy * np.asarray(SENSOR_GAIN)[:, None, None]
    return MultispectralImage(tuple(Band(BandKind(k), raw[k]) for k in range(5)))


def field_labels(seed: int, size: int, layout: FieldLayout = FieldLayout()) -> np.ndarray:
    rng = np.random.default_rng([seed, 0])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = np.deg2rad(rng.uniform(-layout.max_row_angle_deg, layout.max_row_angle_deg))
    phase = rng.uniform(0, layout.row_period)
    across = yy * np.cos(theta) - xx * np.sin(theta) + phase
    labels = np.where(np.mod(across, layout.row_period) < layout.row_width, 1, 0).astype(np.uint8)

    n_weeds = int(round(layout.weeds_per_megapixel * size * size / 1024**2))
    for _ in range(n_weeds):
        cx, cy = rng.uniform(0, size, 2)
        a = rng.uniform(*layout.weed_major)
        b = rng.uniform(*layout.weed_minor)
        phi = rng.uniform(0, np.pi)
        r = int(np.ceil(a)) + 1
        x0, x1 = max(int(cx) - r, 0), min(int(cx) + r + 1, size)
        y0, y1 = max(int(cy) - r, 0), min(int(cy) + r + 1, size)
        if x0 >= x1 or y0 >= y1:
            continue
        dx = xx[y0:y1, x0:x1] - cx
        dy = yy[y0:y1, x0:x1] - cy
        u = dx * np.cos(phi) + dy * np.sin(phi)
        v = -dx * np.sin(phi) + dy * np.cos(phi)
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        labels[y0:y1, x0:x1][inside] = 2
    return labels


def generate_synthetic_field(seed: int, size: int = 1024) -> tuple[MultispectralImage, np.ndarray]:
    """Raw 5-band field capture and its background/crop/weed labels."""
    if size < MIN_SIZE:
        raise SizeTooSmall(f"synthetic field must be at least {MIN_SIZE} px, got {size}")
    labels = field_labels(seed, size)
    reflectance = np.moveaxis(PROFILES[labels], -1, 0)
    image = _noisy_capture(reflectance, np.random.default_rng([seed, 1]))
    return image, labels


def generate_panel_capture(seed: int) -> MultispectralImage:
    """Small capture of the reference panel lying on bare soil."""
    reflectance = np.empty((5, PANEL_SIZE, PANEL_SIZE))
    reflectance[:] = np.asarray(SOIL)[:, None, None]
    x0, y0, x1, y1 = PANEL_REGION
    reflectance[:, y0:y1, x0:x1] = PANEL_REFLECTANCE
    return _noisy_capture(reflectance, np.random.default_rng([seed, 2]))
