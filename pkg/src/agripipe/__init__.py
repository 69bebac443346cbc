"""Multispectral weed mapping: from raw band captures to class maps and metrics."""

from .classifier import ClassifierModel, TrainConfig, gradient_check, predict, train
from .config import PipelineConfig, load_config
from .dataset import SplitManifest, Tile, augment_tile, split_tiles, stitch_predictions, tile_image
from .errors import AgriPipeError
from .evaluation import MetricsReport, compute_metrics, confusion
from .indices import FeatureStack, build_feature_stack, compute_index
from .mosaic import MosaicPlan, plan_mosaic, render_mosaic
from .preprocess import CalibrationRecord, apply_calibration, derive_calibration, median_filter, normalize_band
from .raster import (
    Band,
    BandKind,
    CaptureMeta,
    IndexKind,
    MultispectralImage,
    parse_capture_filename,
    read_raster,
    write_raster,
)
from .registration import AffineTransform, estimate_affine_ransac, match_descriptors, warp_band, detect_keypoints

__version__ = "0.1.0"
