"""Pipeline configuration: one flat key=value file plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .classifier import ARCHITECTURES, TrainConfig
from .errors import ConfigInvalid, MissingInput
from .raster import BandKind
from .registration import AlignConfig, DetectorConfig, RansacConfig


@dataclass(frozen=True)
class PipelineConfig:
    out: str = "run"
    seed: int = 7
    jobs: int = 1

    # synth
    synth_size: int = 1024

    # ingest
    input: str = ""

    # denoise
    denoise_input: str = "raw.msr"
    median_radius: int = 1

    # normalize
    normalize_input: str = "raw.msr"

    # calibrate
    calibrate_input: str = "raw.msr"
    panel: str = "panel.msr"
    panel_region: str = "16,16,48,48"
    panel_reflectance: float = 0.5

    # register / mosaic
    register_input: str = "calibrated.msr"
    register_reference: str = "NIR"
    mosaic_captures: str = ""
    mosaic_band: str = "NIR"
    detector_octaves: int = 3
    detector_intervals: int = 3
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    match_ratio: float = 0.75
    ransac_iterations: int = 2000
    ransac_threshold: float = 2.0
    ransac_min_inliers: int = 12
    ncc_threshold: float = 0.5

    # features
    features_input: str = "calibrated.msr"
    l_factor: float = 0.5

    # tile / split
    tile_size: int = 512
    stride: int = 256

    # train
    architecture: str = "linear"
    hidden: int = 32
    learning_rate: float = 0.1
    epochs: int = 5
    batch_size: int = 512
    l2: float = 0.0
    train_augmented: bool = False

    # evaluate
    evaluate_split: str = "test"

    def __post_init__(self):
        problems = []
        if self.jobs < 1:
            problems.append("jobs must be >= 1")
        if self.synth_size < 512:
            problems.append("synth_size must be >= 512")
        if self.median_radius < 1:
            problems.append("median_radius must be >= 1")
        if not 0 < self.panel_reflectance <= 1:
            problems.append("panel_reflectance must lie in (0, 1]")
        try:
            x0, y0, x1, y1 = self.region
            if x0 >= x1 or y0 >= y1 or x0 < 0 or y0 < 0:
                problems.append("panel_region must be x0,y0,x1,y1 with x0<x1, y0<y1")
        except ValueError:
            problems.append("panel_region must be four comma-separated integers")
        for key in ("register_reference", "mosaic_band"):
            try:
                BandKind.from_label(getattr(self, key))
            except ValueError:
                problems.append(f"{key} must name a band (Red, Green, Blue, NIR, RedEdge)")
        if not 0 < self.match_ratio < 1:
            problems.append("match_ratio must lie in (0, 1)")
        if self.ransac_iterations < 1:
            problems.append("ransac_iterations must be >= 1")
        if self.ransac_threshold <= 0:
            problems.append("ransac_threshold must be > 0")
        if self.tile_size < 1:
            problems.append("tile_size must be >= 1")
        if not 1 <= self.stride <= self.tile_size:
            problems.append("stride must lie in [1, tile_size]")
        if self.l_factor < 0:
            problems.append("l_factor must be >= 0")
        if self.architecture not in ARCHITECTURES:
            problems.append(f"architecture must be one of {ARCHITECTURES}")
        if self.evaluate_split not in ("train", "val", "test", "all"):
            problems.append("evaluate_split must be train, val, test or all")
        try:
            self.train_config
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigInvalid("; ".join(problems))

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def path(self, name: str) -> Path:
        """Resolve a stage file name against the output directory."""
        p = Path(name)
        return p if p.is_absolute() else self.out_dir / p

    @property
    def region(self) -> tuple[int, int, int, int]:
        parts = [int(v) for v in self.panel_region.split(",")]
        if len(parts) != 4:
            raise ValueError("need four values")
        return tuple(parts)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            l2=self.l2,
            architecture=self.architecture,
            hidden=self.hidden,
        )

    @property
    def align_config(self) -> AlignConfig:
        return AlignConfig(
            detector=DetectorConfig(
                octaves=self.detector_octaves,
                intervals=self.detector_intervals,
                contrast_threshold=self.contrast_threshold,
                edge_ratio=self.edge_ratio,
            ),
            ransac=RansacConfig(
                iterations=self.ransac_iterations,
                inlier_threshold_px=self.ransac_threshold,
                min_inliers=self.ransac_min_inliers,
                seed=self.seed,
            ),
            ratio=self.match_ratio,
            ncc_threshold=self.ncc_threshold,
        )

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def _convert(name: str, kind, raw: str):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigInvalid(f"{name}: cannot parse {raw!r} as {kind}") from None


def parse_pairs(text: str, source: str = "config") -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(file_values: Mapping[str, str], overrides: Mapping[str, str]) -> PipelineConfig:
    """Merge file values and overrides (overrides win) into a validated config."""
    types = {f.name: f.type for f in fields(PipelineConfig)}
    merged = {**file_values, **overrides}
    unknown = sorted(set(merged) - set(types))
    if unknown:
        raise ConfigInvalid(f"unknown configuration keys: {unknown}")
    values = {k: _convert(k, types[k], v) for k, v in merged.items()}
    return PipelineConfig(**values)


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> PipelineConfig:
    file_values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise MissingInput(f"config file {p} not found")
        file_values = parse_pairs(p.read_text(), str(p))
    return build_config(file_values, overrides or {})


def replace_config(config: PipelineConfig, **changes) -> PipelineConfig:
    return dataclasses.replace(config, **changes)
