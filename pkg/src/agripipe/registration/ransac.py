"""Robust affine estimation from point correspondences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DegenerateSample, NoConsensus, TooFewMatches
from .keypoints import Keypoint
from .matching import MatchPair
from .transform import AffineTransform

_CHUNK = 256


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    inlier_threshold_px: float = 2.0
    min_inliers: int = 12
    seed: int = 0


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer; uint64 arithmetic wraps as intended
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _samples(n: int, iterations: np.ndarray, seed: int) -> np.ndarray:
    """Three distinct indices per iteration, a pure function of (seed, iteration).

    Counter-based hashing keeps every iteration's draw independent of how
    iterations are batched or scheduled.
    """
    key = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    counters = iterations.astype(np.uint64)[:, None] * np.uint64(3) + np.arange(1, 4, dtype=np.uint64)
    r = _mix64(key + counters * _GOLDEN)
    a = (r[:, 0] % np.uint64(n)).astype(np.int64)
    b = (r[:, 1] % np.uint64(n - 1)).astype(np.int64)
    c = (r[:, 2] % np.uint64(n - 2)).astype(np.int64) if n > 3 else np.zeros(len(r), dtype=np.int64)
    # map onto distinct indices by skipping the ones already taken
    b = b + (b >= a)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def fit_affine_lstsq(src: np.ndarray, dst: np.ndarray) -> AffineTransform:
    """Least-squares affine mapping ``src`` onto ``dst`` (both (n, 2), n >= 3)."""
    design = np.column_stack([src, np.ones(len(src))])
    params, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return AffineTransform(params.T)


def ransac_affine(src, dst, config: RansacConfig | None = None) -> tuple[AffineTransform, np.ndarray]:
    """Fit ``dst ≈ A(src)`` robustly.

    Correspondences are put in a canonical (lexicographic) order before
    sampling, so the result does not depend on input order. Candidate models
    are ranked by inlier count, then by summed inlier error, then by
    iteration index. The winner's inlier set is refit by least squares.

    Returns the transform and a boolean inlier mask in input order.
    """
    cfg = config or RansacConfig()
    if cfg.iterations < 1:
        raise ValueError("iterations must be >= 1")
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 3:
        raise TooFewMatches(f"need at least 3 correspondences, got {n}")

    order = np.lexsort((dst[:, 1], dst[:, 0], src[:, 1], src[:, 0]))
    s, d = src[order], dst[order]
    s_h = np.column_stack([s, np.ones(n)])
    extent = max(1.0, float(np.ptp(s, axis=0).max()))

    best = None  # (count, total_error, iteration, inlier mask)
    any_valid = False
    for start in range(0, cfg.iterations, _CHUNK):
        its = np.arange(start, min(start + _CHUNK, cfg.iterations))
        picks = _samples(n, its, cfg.seed)
        design = s_h[picks]  # (k, 3, 3)
        det = np.linalg.det(design)
        ok = np.abs(det) > 1e-10 * extent**2
        if not ok.any():
            continue
        any_valid = True
        its, design, picks = its[ok], design[ok], picks[ok]
        params = np.linalg.solve(design, d[picks])  # (k, 3, 2)
        pred = np.einsum("nj,kjc->knc", s_h, params)
        err = np.linalg.norm(pred - d[None], axis=2)
        inl = err < cfg.inlier_threshold_px
        counts = inl.sum(axis=1)
        totals = np.where(inl, err, 0.0).sum(axis=1)
        # lexsort: last key is primary
        j = np.lexsort((its, totals, -counts))[0]
        cand = (int(counts[j]), float(totals[j]), int(its[j]))
        if best is None or cand[0] > best[0] or (cand[0] == best[0] and (cand[1], cand[2]) < (best[1], best[2])):
            best = (*cand, inl[j].copy())

    if not any_valid:
        raise DegenerateSample("every sampled triple was collinear")
    count, _, _, inliers = best
    if count < max(cfg.min_inliers, 3):
        raise NoConsensus(f"best model has {count} inliers, need {cfg.min_inliers}")
    transform = fit_affine_lstsq(s[inliers], d[inliers])
    if not transform.is_invertible:
        raise NoConsensus("refit transform is singular")
    mask = np.zeros(n, dtype=bool)
    mask[order[inliers]] = True
    return transform, mask


def estimate_affine_ransac(
    matches: Sequence[MatchPair],
    a: Sequence[Keypoint],
    b: Sequence[Keypoint],
    config: RansacConfig | None = None,
) -> tuple[AffineTransform, np.ndarray]:
    """Estimate the affine taking keypoint positions in ``a`` to those in ``b``."""
    if len(matches) < 3:
        raise TooFewMatches(f"need at least 3 matches, got {len(matches)}")
    src = np.array([(a[m.index_a].x, a[m.index_a].y) for m in matches])
    dst = np.array([(b[m.index_b].x, b[m.index_b].y) for m in matches])
    return ransac_affine(src, dst, config)
