"""Band-to-band co-registration built from the detector, matcher and RANSAC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import TooFewMatches
from ..parallel import parallel_map
from ..preprocess import median_filter
from ..raster import Band, BandKind, MultispectralImage
from .keypoints import DetectorConfig, Keypoint, detect_keypoints
from .matching import match_descriptors
from .quality import NCC_ACCEPT, RegistrationScore, validate_registration
from .ransac import RansacConfig, estimate_affine_ransac
from .transform import AffineTransform, warp_band


@dataclass(frozen=True)
class AlignConfig:
    detector: DetectorConfig = DetectorConfig()
    ransac: RansacConfig = RansacConfig()
    ratio: float = 0.75
    ncc_threshold: float = NCC_ACCEPT
    # detect on gradient magnitude so bands with inverted contrast still match
    use_structure: bool = True
    # median radius applied before detection only; impulse noise otherwise dominates gradients
    presmooth_radius: int = 1


def structure_band(band: Band) -> Band:
    """Gradient magnitude of a band; insensitive to the sign of its contrast."""
    v = band.values.astype(np.float64)
    mag = np.hypot(ndimage.sobel(v, axis=1, mode="nearest"), ndimage.sobel(v, axis=0, mode="nearest"))
    valid = ndimage.binary_erosion(band.valid, iterations=1, border_value=1) if not band.valid.all() else band.valid
    return Band(band.kind, mag, valid)


def _detection_band(band: Band, cfg: AlignConfig) -> Band:
    if cfg.presmooth_radius > 0:
        band = median_filter(band, cfg.presmooth_radius)
    return structure_band(band) if cfg.use_structure else band


def register_pair(
    moving: Band,
    reference: Band,
    config: AlignConfig | None = None,
    reference_keypoints: list[Keypoint] | None = None,
) -> tuple[AffineTransform, int]:
    """Estimate the transform taking ``moving`` pixel coordinates into ``reference``.

    Returns the transform and its inlier count. Pass ``reference_keypoints``
    to reuse detections when one reference serves several bands.
    """
    cfg = config or AlignConfig()
    kp_m = detect_keypoints(_detection_band(moving, cfg), cfg.detector)
    kp_r = reference_keypoints
    if kp_r is None:
        kp_r = detect_keypoints(_detection_band(reference, cfg), cfg.detector)
    matches = match_descriptors(kp_m, kp_r, cfg.ratio)
    if len(matches) < 3:
        raise TooFewMatches(f"only {len(matches)} descriptor matches between {moving.kind!r} and {reference.kind!r}")
    transform, inliers = estimate_affine_ransac(matches, kp_m, kp_r, cfg.ransac)
    return transform, int(inliers.sum())


def register_bands(
    image: MultispectralImage,
    reference: BandKind = BandKind.NIR,
    config: AlignConfig | None = None,
    jobs: int = 1,
) -> tuple[MultispectralImage, dict[BandKind, AffineTransform], dict[BandKind, RegistrationScore]]:
    """Warp every band onto ``reference`` and validate each alignment."""
    cfg = config or AlignConfig()
    ref = image.band(reference)
    ref_check = _detection_band(ref, cfg)
    ref_keypoints = detect_keypoints(ref_check, cfg.detector)

    def one(band: Band):
        if band.kind == reference:
            return band, AffineTransform.identity(), None
        transform, _ = register_pair(band, ref, cfg, ref_keypoints)
        warped = warp_band(band, transform, (image.width, image.height))
        score = validate_registration(ref_check, _detection_band(warped, cfg), cfg.ncc_threshold)
        return warped, transform, score

    results = parallel_map(one, image.bands, jobs)
    transforms = {b.kind: t for b, (_, t, _) in zip(image.bands, results)}
    scores = {b.kind: s for b, (_, _, s) in zip(image.bands, results) if s is not None}
    return image.with_bands(r[0] for r in results), transforms, scores
