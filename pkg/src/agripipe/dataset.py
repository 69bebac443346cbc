"""Sliding-window tiles, deterministic train/val/test splits, and tile augmentation."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import IoFailure, NonSquareTile, PatchOutOfBounds, TileLargerThanImage, TooFewTiles
from .indices import FeatureStack
from .raster import as_label_mask

DEFAULT_TILE = 512
DEFAULT_STRIDE = 256
SPLIT_FRACTIONS = (0.70, 0.10, 0.20)
MIN_SPLIT_TILES = 10
BLUR_SIGMA = 1.0
AUGMENT_VARIANTS = ("rot90", "rot180", "rot270", "hflip", "vflip", "blur")

_TILE_ID = re.compile(r"^(?P<source>.+)_x(?P<x>\d+)_y(?P<y>\d+)(?:_(?P<variant>[a-z0-9]+))?$")


@dataclass(frozen=True, eq=False)
class Tile:
    features: np.ndarray  # (10, T, T) float32
    labels: np.ndarray  # (T, T) uint8
    valid: np.ndarray  # (T, T) bool
    origin: tuple[int, int]  # (x, y) in the source raster
    source_id: str = "field"
    variant: str = ""

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def tile_id(self) -> str:
        base = f"{self.source_id}_x{self.origin[0]}_y{self.origin[1]}"
        return f"{base}_{self.variant}" if self.variant else base

    def equals(self, other: "Tile") -> bool:
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.valid, other.valid)
        )


def parse_tile_id(tile_id: str) -> tuple[str, tuple[int, int], str]:
    m = _TILE_ID.match(tile_id)
    if m is None:
        raise ValueError(f"not a tile id: {tile_id!r}")
    return m["source"], (int(m["x"]), int(m["y"])), m["variant"] or ""


def window_origins(length: int, tile_size: int, stride: int, cover_edge: bool = False) -> list[int]:
    """Window starts along one axis; optionally add one anchored to the far edge."""
    starts = list(range(0, length - tile_size + 1, stride))
    if cover_edge and starts[-1] + tile_size < length:
        starts.append(length - tile_size)
    return starts


def _check_window(width: int, height: int, tile_size: int, stride: int) -> None:
    if tile_size < 1 or tile_size > width or tile_size > height:
        raise TileLargerThanImage(f"tile {tile_size} does not fit a {width}x{height} image")
    if not 1 <= stride <= tile_size:
        raise ValueError(f"stride must lie in [1, {tile_size}], got {stride}")


def _cut(stack: FeatureStack, labels: np.ndarray, x: int, y: int, size: int, source_id: str) -> Tile:
    win = np.s_[y:y + size, x:x + size]
    return Tile(
        stack.channels[(slice(None),) + win].copy(),
        labels[win].copy(),
        stack.valid[win].copy(),
        (x, y),
        source_id,
    )


def tile_image(
    stack: FeatureStack,
    labels,
    tile_size: int = DEFAULT_TILE,
    stride: int = DEFAULT_STRIDE,
    source_id: str = "field",
) -> list[Tile]:
    """Cut full tiles at multiples of ``stride`` in row-major order; partial border tiles are dropped."""
    labels = as_label_mask(labels, stack.shape)
    _check_window(stack.width, stack.height, tile_size, stride)
    return [
        _cut(stack, labels, x, y, tile_size, source_id)
        for y in window_origins(stack.height, tile_size, stride)
        for x in window_origins(stack.width, tile_size, stride)
    ]


def training_windows(
    stack: FeatureStack,
    labels,
    train_tiles: Sequence[Tile],
    stride: int,
    source_id: str = "field",
) -> list[Tile]:
    """Overlapping windows lying entirely inside the union of the training tiles.

    This adds overlap-stride samples without leaking pixels from the
    validation or test tiles.
    """
    if not train_tiles:
        return []
    labels = as_label_mask(labels, stack.shape)
    size = train_tiles[0].size
    _check_window(stack.width, stack.height, size, stride)
    covered = np.zeros(stack.shape, dtype=bool)
    for t in train_tiles:
        x, y = t.origin
        covered[y:y + size, x:x + size] = True
    return [
        _cut(stack, labels, x, y, size, source_id)
        for y in window_origins(stack.height, size, stride)
        for x in window_origins(stack.width, size, stride)
        if covered[y:y + size, x:x + size].all()
    ]


class SplitMix64:
    """Minimal 64-bit generator (Steele, Lea & Flood's SplitMix64)."""

    MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.state = seed & self.MASK

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection."""
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next()
            if r < limit:
                return r % bound


def fisher_yates(items: Sequence, seed: int) -> list:
    out = list(items)
    rng = SplitMix64(seed)
    for i in range(len(out) - 1, 0, -1):
        j = rng.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS

    def dumps(self) -> str:
        lines = [f"seed={self.seed}"]
        for name in ("train", "val", "test"):
            lines += [f"{name} {tid}" for tid in getattr(self, name)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SplitManifest":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("seed="):
            raise ValueError("manifest must start with seed=<n>")
        groups: dict[str, list[str]] = {"train": [], "val": [], "test": []}
        for ln in lines[1:]:
            name, _, tid = ln.partition(" ")
            if name not in groups or not tid:
                raise ValueError(f"bad manifest line {ln!r}")
            groups[name].append(tid)
        return cls(int(lines[0][5:]), *(tuple(groups[k]) for k in ("train", "val", "test")))

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "SplitManifest":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc


def split_tiles(tile_ids: Sequence[str], seed: int) -> SplitManifest:
    """Shuffle with Fisher-Yates/SplitMix64, then cut floor(0.7n) / floor(0.1n) / rest."""
    ids = list(tile_ids)
    n = len(ids)
    if n < MIN_SPLIT_TILES:
        raise TooFewTiles(f"need at least {MIN_SPLIT_TILES} tiles to split, got {n}")
    if len(set(ids)) != n:
        raise ValueError("tile ids must be unique")
    shuffled = fisher_yates(ids, seed)
    # integer arithmetic: floor(0.7 n) without float rounding surprises
    n_train = (7 * n) // 10
    n_val = n // 10
    return SplitManifest(
        seed,
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + n_val]),
        tuple(shuffled[n_train + n_val:]),
    )


def _masked_blur(features: np.ndarray, valid: np.ndarray, sigma: float) -> np.ndarray:
    m = valid.astype(np.float64)
    norm = ndimage.gaussian_filter(m, sigma, mode="nearest")
    out = np.empty_like(features)
    for c in range(features.shape[0]):
        num = ndimage.gaussian_filter(features[c].astype(np.float64) * m, sigma, mode="nearest")
        out[c] = np.divide(num, norm, out=np.zeros_like(num), where=norm > 1e-12)
    return np.where(valid, out, 0.0).astype(np.float32)


def augment_tile(tile: Tile) -> list[Tile]:
    """The six fixed variants: rotations by 90/180/270 (CCW), horizontal and vertical flips, blur."""
    if tile.labels.shape[0] != tile.labels.shape[1]:
        raise NonSquareTile(f"tile is {tile.labels.shape[1]}x{tile.labels.shape[0]}")

    def geometric(fn, name):
        return replace(
            tile,
            features=np.ascontiguousarray(fn(tile.features)),
            labels=np.ascontiguousarray(fn(tile.labels)),
            valid=np.ascontiguousarray(fn(tile.valid)),
            variant=name,
        )

    variants = [
        geometric(lambda a: np.rot90(a, 1, axes=(-2, -1)), "rot90"),
        geometric(lambda a: np.rot90(a, 2, axes=(-2, -1)), "rot180"),
        geometric(lambda a: np.rot90(a, 3, axes=(-2, -1)), "rot270"),
        geometric(lambda a: np.flip(a, axis=-1), "hflip"),
        geometric(lambda a: np.flip(a, axis=-2), "vflip"),
        replace(tile, features=_masked_blur(tile.features, tile.valid, BLUR_SIGMA), variant="blur"),
    ]
    return variants


def average_predictions(
    patches: Iterable[tuple[tuple[int, int], np.ndarray]],
    canvas: tuple[int, int],
    n_classes: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean class probabilities (C, H, W) over covering patches, and the cover count.

    ``canvas`` is (width, height); each patch is ((x, y), (C, T, T) probabilities).
    Uncovered pixels get uniform probabilities.
    """
    width, height = canvas
    total = np.zeros((n_classes, height, width))
    count = np.zeros((height, width), dtype=np.int64)
    for (x, y), probs in patches:
        probs = np.asarray(probs, dtype=np.float64)
        c, th, tw = probs.shape
        if c != n_classes:
            raise ValueError(f"patch has {c} class planes, expected {n_classes}")
        if x < 0 or y < 0 or x + tw > width or y + th > height:
            raise PatchOutOfBounds(f"patch at ({x}, {y}) of size {tw}x{th} exceeds {width}x{height}")
        total[:, y:y + th, x:x + tw] += probs
        count[y:y + th, x:x + tw] += 1
    mean = np.divide(total, count, out=np.full_like(total, 1.0 / n_classes), where=count > 0)
    return mean, count


def stitch_predictions(
    patches: Iterable[tuple[tuple[int, int], np.ndarray]],
    canvas: tuple[int, int],
) -> np.ndarray:
    """Average overlapping patch probabilities and take the per-pixel argmax.

    Uncovered pixels are background; ties go to the lowest class index.
    """
    mean, count = average_predictions(patches, canvas)
    labels = np.argmax(mean, axis=0).astype(np.uint8)
    labels[count == 0] = 0
    return labels


def save_tile(tile: Tile, directory) -> Path:
    """Write ``<tile_id>.msr`` plus a ``<tile_id>.labels.npy`` label file."""
    directory = Path(directory)
    FeatureStack(tile.features, tile.valid).save(directory / f"{tile.tile_id}.msr")
    try:
        np.save(directory / f"{tile.tile_id}.labels.npy", tile.labels)
    except OSError as exc:
        raise IoFailure(f"cannot write labels for {tile.tile_id}: {exc}") from exc
    return directory / f"{tile.tile_id}.msr"


def load_tile(directory, tile_id: str) -> Tile:
    directory = Path(directory)
    source, origin, variant = parse_tile_id(tile_id)
    stack = FeatureStack.load(directory / f"{tile_id}.msr")
    try:
        labels = np.load(directory / f"{tile_id}.labels.npy")
    except OSError as exc:
        raise IoFailure(f"cannot read labels for {tile_id}: {exc}") from exc
    return Tile(stack.channels, as_label_mask(labels, stack.shape), stack.valid, origin, source, variant)
