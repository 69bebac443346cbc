"""Keypoint-based co-registration of bands and captures."""

from .align import AlignConfig, register_bands, register_pair, structure_band
from .keypoints import DetectorConfig, Keypoint, detect_keypoints
from .matching import MatchPair, match_descriptors
from .quality import RegistrationScore, registration_score, validate_registration
from .ransac import RansacConfig, estimate_affine_ransac, fit_affine_lstsq, ransac_affine
from .transform import AffineTransform, bilinear_sample, warp_band

__all__ = [
    "AffineTransform",
    "AlignConfig",
    "DetectorConfig",
    "Keypoint",
    "MatchPair",
    "RansacConfig",
    "RegistrationScore",
    "bilinear_sample",
    "detect_keypoints",
    "estimate_affine_ransac",
    "fit_affine_lstsq",
    "match_descriptors",
    "ransac_affine",
    "register_bands",
    "register_pair",
    "registration_score",
    "structure_band",
    "validate_registration",
    "warp_band",
]
