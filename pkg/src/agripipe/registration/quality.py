from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientOverlap, RegistrationRejected
from ..raster import Band

MIN_OVERLAP = 100
MI_BINS = 32
NCC_ACCEPT = 0.5


@dataclass(frozen=True)
class RegistrationScore:
    ncc: float
    mutual_information: float


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def registration_score(a: Band, b: Band) -> RegistrationScore:
    """Normalized cross-correlation and mutual information (bits) over joint-valid pixels."""
    if a.shape != b.shape:
        raise InsufficientOverlap(f"bands differ in size: {a.shape} vs {b.shape}")
    joint = a.valid & b.valid
    if joint.sum() < MIN_OVERLAP:
        raise InsufficientOverlap(f"{int(joint.sum())} overlapping valid pixels, need {MIN_OVERLAP}")
    x = a.values[joint].astype(np.float64)
    y = b.values[joint].astype(np.float64)

    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc**2).sum() * (yc**2).sum())
    ncc = float(np.clip((xc * yc).sum() / denom, -1.0, 1.0)) if denom > 0 else 0.0

    hist, _, _ = np.histogram2d(_minmax(x), _minmax(y), bins=MI_BINS, range=[[0, 1], [0, 1]])
    pxy = hist / hist.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float((pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])).sum())
    return RegistrationScore(ncc, max(mi, 0.0))


def validate_registration(reference: Band, aligned: Band, threshold: float = NCC_ACCEPT) -> RegistrationScore:
    """Score an alignment and reject it when the correlation is too weak."""
    score = registration_score(reference, aligned)
    if score.ncc < threshold:
        raise RegistrationRejected(f"NCC {score.ncc:.3f} below acceptance threshold {threshold}")
    return score
