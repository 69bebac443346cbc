"""Stage runner and ``agripipe`` command-line entry point.

Every stage reads its inputs from, and writes its outputs to, the output
directory, then appends one line to ``run.log`` recording parameters, input
and output digests, and duration.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import classifier, dataset
from .config import PipelineConfig, load_config
from .errors import AgriPipeError, ConfigInvalid, DimensionMismatch, MissingInput, PatternMismatch
from .evaluation import compute_metrics, confusion
from .indices import FeatureStack, build_feature_stack
from .mosaic import plan_mosaic, render_mosaic
from .parallel import parallel_map
from .preprocess import CalibrationRecord, apply_calibration, derive_calibration, median_filter, normalize_band
from .raster import BandKind, as_label_mask, parse_capture_filename, read_raster, write_raster
from .registration import register_bands, register_pair
from .render import render_map
from .synth import generate_panel_capture, generate_synthetic_field

logger = logging.getLogger("agripipe")

STAGES = (
    "ingest", "denoise", "normalize", "calibrate", "register", "mosaic", "features", "tile",
    "split", "augment", "train", "predict", "evaluate", "render", "synth",
)

RAW = "raw.msr"
LABELS = "labels.npy"
FEATURES = "features.msr"
TILE_DIR = "tiles"
TILE_INDEX = "tiles.txt"
AUG_DIR = "tiles_aug"
AUG_INDEX = "augmented.txt"
MANIFEST = "manifest.txt"
MODEL = "model.txt"
PREDICTION = "prediction.npy"
PROBABILITIES = "probabilities.npy"
METRICS = "metrics.txt"
RUN_LOG = "run.log"
SOURCE_ID = "field"


class _Stage:
    """Bookkeeping for one stage run: declared inputs and produced outputs."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.notes: dict[str, object] = {}

    def need(self, name) -> Path:
        p = self.config.path(name)
        if not p.exists():
            raise MissingInput(f"required input {p} does not exist (run the producing stage first)")
        self.inputs.append(p)
        return p

    def produce(self, name) -> Path:
        p = self.config.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for child in sorted(path.rglob("*")):
            if child.is_file():
                h.update(str(child.relative_to(path)).encode())
                h.update(child.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _read_lines(path: Path) -> list[str]:
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]


def _load_labels(st: _Stage, name=LABELS) -> np.ndarray:
    return as_label_mask(np.load(st.need(name)))


# stages ---------------------------------------------------------------------

def stage_synth(st: _Stage) -> None:
    cfg = st.config
    image, labels = generate_synthetic_field(cfg.seed, cfg.synth_size)
    write_raster(image, st.produce(RAW))
    np.save(st.produce(LABELS), labels)
    write_raster(generate_panel_capture(cfg.seed), st.produce(cfg.panel))
    st.notes["class_fractions"] = ",".join(f"{f:.4f}" for f in np.bincount(labels.ravel(), minlength=3) / labels.size)


def stage_ingest(st: _Stage) -> None:
    cfg = st.config
    if not cfg.input:
        raise ConfigInvalid("ingest needs input=<path to an MSR capture>")
    src = Path(cfg.input)
    if not src.exists():
        raise MissingInput(f"input capture {src} does not exist")
    st.inputs.append(src)
    image = read_raster(src)
    write_raster(image, st.produce(RAW))
    try:
        meta = parse_capture_filename(src.name)
    except PatternMismatch:
        return
    lines = [
        f"date={meta.date.isoformat()}",
        f"area_id={meta.area_id}",
        f"time={meta.time:%H:%M}",
        f"product={meta.product}",
    ]
    st.produce("capture.txt").write_text("\n".join(lines) + "\n")


def stage_denoise(st: _Stage) -> None:
    cfg = st.config
    image = read_raster(st.need(cfg.denoise_input))
    bands = parallel_map(lambda b: median_filter(b, cfg.median_radius), image.bands, cfg.jobs)
    write_raster(image.with_bands(bands), st.produce("denoised.msr"))


def stage_normalize(st: _Stage) -> None:
    """Optional: zero-mean, unit-variance bands; calibration does not consume these."""
    cfg = st.config
    image = read_raster(st.need(cfg.normalize_input))
    results = parallel_map(normalize_band, image.bands, cfg.jobs)
    write_raster(image.with_bands([b for b, _ in results]), st.produce("normalized.msr"))
    lines = [f"{b.kind.label} mu={s.mu!r} sigma={s.sigma!r}" for b, s in results]
    st.produce("normalization.txt").write_text("\n".join(lines) + "\n")


def stage_calibrate(st: _Stage) -> None:
    cfg = st.config
    image = read_raster(st.need(cfg.calibrate_input))
    panel = read_raster(st.need(cfg.panel))
    record = derive_calibration(panel, cfg.region, cfg.panel_reflectance)
    record.save(st.produce("calibration.txt"))
    write_raster(apply_calibration(image, record), st.produce("calibrated.msr"))


def stage_register(st: _Stage) -> None:
    cfg = st.config
    image = read_raster(st.need(cfg.register_input))
    aligned, transforms, scores = register_bands(
        image, BandKind.from_label(cfg.register_reference), cfg.align_config, cfg.jobs
    )
    write_raster(aligned, st.produce("registered.msr"))
    lines = [f"{kind.label} {t.dumps().strip()}" for kind, t in transforms.items()]
    st.produce("transforms.txt").write_text("\n".join(lines) + "\n")
    score_lines = [f"{k.label} ncc={s.ncc:.6f} mi={s.mutual_information:.6f}" for k, s in scores.items()]
    st.produce("registration.txt").write_text("\n".join(score_lines) + "\n")


def stage_mosaic(st: _Stage) -> None:
    cfg = st.config
    names = [n.strip() for n in cfg.mosaic_captures.split(",") if n.strip()]
    if not names:
        raise ConfigInvalid("mosaic needs mosaic_captures=<a.msr,b.msr,...>")
    captures = [read_raster(st.need(n)) for n in names]
    kind = BandKind.from_label(cfg.mosaic_band)
    edges = []
    for i in range(len(captures) - 1):
        t, _ = register_pair(captures[i + 1].band(kind), captures[i].band(kind), cfg.align_config)
        edges.append((i, i + 1, t))
    plan = plan_mosaic(captures, edges)
    plan.save(st.produce("plan.txt"))
    write_raster(render_mosaic(captures, plan, cfg.jobs), st.produce("mosaic.msr"))


def stage_features(st: _Stage) -> None:
    cfg = st.config
    image = read_raster(st.need(cfg.features_input))
    build_feature_stack(image, cfg.l_factor).save(st.produce(FEATURES))


def stage_tile(st: _Stage) -> None:
    cfg = st.config
    stack = FeatureStack.load(st.need(FEATURES))
    labels = _load_labels(st)
    # non-overlapping grid so split tiles never share pixels
    tiles = dataset.tile_image(stack, labels, cfg.tile_size, cfg.tile_size, SOURCE_ID)
    out = st.produce(TILE_DIR)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    parallel_map(lambda t: dataset.save_tile(t, out), tiles, cfg.jobs)
    st.produce(TILE_INDEX).write_text("\n".join(t.tile_id for t in tiles) + "\n")
    st.notes["tiles"] = len(tiles)


def stage_split(st: _Stage) -> None:
    ids = _read_lines(st.need(TILE_INDEX))
    manifest = dataset.split_tiles(ids, st.config.seed)
    manifest.save(st.produce(MANIFEST))
    st.notes["counts"] = f"{len(manifest.train)}/{len(manifest.val)}/{len(manifest.test)}"


def stage_augment(st: _Stage) -> None:
    cfg = st.config
    manifest = dataset.SplitManifest.load(st.need(MANIFEST))
    tile_dir = st.need(TILE_DIR)
    out = st.produce(AUG_DIR)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)

    def one(tid):
        variants = dataset.augment_tile(dataset.load_tile(tile_dir, tid))
        for v in variants:
            dataset.save_tile(v, out)
        return [v.tile_id for v in variants]

    ids = [v for group in parallel_map(one, manifest.train, cfg.jobs) for v in group]
    st.produce(AUG_INDEX).write_text("\n".join(ids) + "\n")
    st.notes["variants"] = len(ids)


def stage_train(st: _Stage) -> None:
    cfg = st.config
    manifest = dataset.SplitManifest.load(st.need(MANIFEST))
    tile_dir = st.need(TILE_DIR)
    train_tiles = [dataset.load_tile(tile_dir, tid) for tid in manifest.train]
    tiles = list(train_tiles)
    if cfg.stride < cfg.tile_size:
        stack = FeatureStack.load(st.need(FEATURES))
        labels = _load_labels(st)
        have = {t.tile_id for t in tiles}
        extra = dataset.training_windows(stack, labels, train_tiles, cfg.stride, SOURCE_ID)
        tiles += [t for t in extra if t.tile_id not in have]
    if cfg.train_augmented:
        aug_dir = st.need(AUG_DIR)
        tiles += [dataset.load_tile(aug_dir, tid) for tid in _read_lines(st.need(AUG_INDEX))]
    model = classifier.train(tiles, cfg.train_config)
    model.save(st.produce(MODEL))
    st.notes["training_tiles"] = len(tiles)
    st.notes["loss"] = f"{model.history[0]:.6f}->{model.history[-1]:.6f}"


def stage_predict(st: _Stage) -> None:
    cfg = st.config
    model = classifier.ClassifierModel.load(st.need(MODEL))
    stack = FeatureStack.load(st.need(FEATURES))
    size = min(cfg.tile_size, stack.width, stack.height)
    stride = min(cfg.stride, size)
    origins = [
        (x, y)
        for y in dataset.window_origins(stack.height, size, stride, cover_edge=True)
        for x in dataset.window_origins(stack.width, size, stride, cover_edge=True)
    ]

    def one(origin):
        x, y = origin
        window = FeatureStack(stack.channels[:, y:y + size, x:x + size], stack.valid[y:y + size, x:x + size])
        return origin, classifier.predict(model, window)[1]

    patches = parallel_map(one, origins, cfg.jobs)
    labels = dataset.stitch_predictions(patches, (stack.width, stack.height))
    probs, _ = dataset.average_predictions(patches, (stack.width, stack.height))
    np.save(st.produce(PREDICTION), labels)
    np.save(st.produce(PROBABILITIES), probs.astype(np.float32))


def _split_mask(st: _Stage, shape) -> np.ndarray:
    cfg = st.config
    if cfg.evaluate_split == "all":
        return np.ones(shape, dtype=bool)
    manifest = dataset.SplitManifest.load(st.need(MANIFEST))
    mask = np.zeros(shape, dtype=bool)
    for tid in getattr(manifest, cfg.evaluate_split):
        _, (x, y), _ = dataset.parse_tile_id(tid)
        mask[y:y + cfg.tile_size, x:x + cfg.tile_size] = True
    return mask


def stage_evaluate(st: _Stage) -> None:
    gt = _load_labels(st)
    pred = as_label_mask(np.load(st.need(PREDICTION)))
    if gt.shape != pred.shape:
        raise DimensionMismatch(f"labels {gt.shape} vs prediction {pred.shape}")
    valid = _split_mask(st, gt.shape)
    features = st.config.path(FEATURES)
    if features.exists():
        st.inputs.append(features)
        stack_valid = FeatureStack.load(features).valid
        if stack_valid.shape != gt.shape:
            raise DimensionMismatch(f"features {stack_valid.shape} vs labels {gt.shape}")
        valid &= stack_valid
    report = compute_metrics(confusion(gt, pred, valid))
    st.produce(METRICS).write_text(report.record() + "\n")
    st.produce("metrics_table.txt").write_text(report.table())
    st.notes["accuracy"] = f"{report.accuracy:.6f}"
    st.notes["miou"] = f"{report.miou:.6f}"
    print(report.table(), end="")


def stage_render(st: _Stage) -> None:
    render_map(np.load(st.need(PREDICTION)), st.produce("prediction.png"))
    gt = st.config.path(LABELS)
    if gt.exists():
        st.inputs.append(gt)
        render_map(np.load(gt), st.produce("ground_truth.png"))


_HANDLERS: dict[str, Callable[[_Stage], None]] = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "denoise": stage_denoise,
    "normalize": stage_normalize,
    "calibrate": stage_calibrate,
    "register": stage_register,
    "mosaic": stage_mosaic,
    "features": stage_features,
    "tile": stage_tile,
    "split": stage_split,
    "augment": stage_augment,
    "train": stage_train,
    "predict": stage_predict,
    "evaluate": stage_evaluate,
    "render": stage_render,
}


def _log_line(name: str, st: _Stage, status: str, duration: float, error: str = "") -> str:
    cfg = st.config
    params = ";".join(f"{k}={v}" for k, v in cfg.items())
    ins = ",".join(f"{p.name}:{file_digest(p)[:16]}" for p in st.inputs if p.exists())
    outs = ",".join(f"{p.name}:{file_digest(p)[:16]}" for p in st.outputs if p.exists())
    notes = ";".join(f"{k}={v}" for k, v in st.notes.items())
    parts = [f"stage={name}", f"status={status}", f"duration_s={duration:.3f}",
             f"params={params}", f"inputs={ins}", f"outputs={outs}"]
    if notes:
        parts.append(f"notes={notes}")
    if error:
        parts.append(f"error={error}")
    return " ".join(parts)


def run_stage(name: str, config: PipelineConfig) -> int:
    """Run one stage; return 0 on success or a nonzero code (errors are re-raised)."""
    if name not in _HANDLERS:
        raise ConfigInvalid(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    config.out_dir.mkdir(parents=True, exist_ok=True)
    st = _Stage(config)
    start = time.perf_counter()
    try:
        _HANDLERS[name](st)
    except AgriPipeError as exc:
        line = _log_line(name, st, "error", time.perf_counter() - start, exc.category)
        with open(config.out_dir / RUN_LOG, "a") as log:
            log.write(line + "\n")
        raise
    line = _log_line(name, st, "ok", time.perf_counter() - start)
    with open(config.out_dir / RUN_LOG, "a") as log:
        log.write(line + "\n")
    logger.info("%s done in %.2fs", name, time.perf_counter() - start)
    return 0


def exit_code(exc: AgriPipeError) -> int:
    return 2 if isinstance(exc, (ConfigInvalid, MissingInput)) else 1


def _parse_args(argv: Sequence[str] | None):
    parser = argparse.ArgumentParser(prog="agripipe", description="Multispectral weed-mapping pipeline.")
    parser.add_argument("stages", nargs="+", metavar="stage", help=f"one or more of: {', '.join(STAGES)}")
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="seed for synth, split, RANSAC and training")
    parser.add_argument("--jobs", type=int, help="worker threads (1 guarantees bitwise determinism)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigInvalid(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value
        for key in ("seed", "jobs", "out"):
            if getattr(args, key) is not None:
                overrides[key] = str(getattr(args, key))
        config = load_config(args.config, overrides)
        for name in args.stages:
            run_stage(name, config)
    except AgriPipeError as exc:
        print(f"agripipe: error [{exc.category}]: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
