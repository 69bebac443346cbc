"""Pixelwise 3-class classifier over the 10-channel feature stack.

Two architectures share one code path: ``linear`` (softmax regression) and
``mlp`` (one ReLU hidden layer). Weights are plain numpy arrays; training is
seeded mini-batch SGD on mean cross-entropy over valid pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Tile
from .errors import ChannelMismatch, DivergedLoss, IoFailure, MissingClass
from .indices import N_CHANNELS, FeatureStack

logger = logging.getLogger(__name__)

N_CLASSES = 3
ARCHITECTURES = ("linear", "mlp")
DEFAULT_HIDDEN = 32


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 5
    batch_size: int = 512
    seed: int = 0
    l2: float = 0.0
    architecture: str = "linear"
    hidden: int = DEFAULT_HIDDEN

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.architecture == "mlp" and self.hidden < 1:
            raise ValueError("hidden width must be >= 1")


@dataclass
class ClassifierModel:
    architecture: str
    layers: list  # [(W, b), ...] with W of shape (fan_in, fan_out)
    feature_mean: np.ndarray
    feature_std: np.ndarray
    class_count: int = N_CLASSES
    history: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        dims = [N_CHANNELS] + [w.shape[1] for w, _ in self.layers]
        for (w, b), fan_in in zip(self.layers, dims[:-1]):
            if w.shape[0] != fan_in or b.shape != (w.shape[1],):
                raise ValueError("inconsistent layer shapes")
        if dims[-1] != self.class_count:
            raise ValueError(f"output width {dims[-1]} != class_count {self.class_count}")
        if np.any(self.feature_std <= 0):
            raise ValueError("feature std must be positive per channel")

    @property
    def hidden(self) -> int:
        return self.layers[0][0].shape[1] if self.architecture == "mlp" else 0

    @classmethod
    def initialize(cls, config: TrainConfig, mean, std) -> "ClassifierModel":
        rng = np.random.default_rng(config.seed)
        widths = [N_CHANNELS, N_CLASSES] if config.architecture == "linear" else [N_CHANNELS, config.hidden, N_CLASSES]
        layers = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
        return cls(config.architecture, layers, np.asarray(mean, float), np.asarray(std, float))

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.feature_mean) / self.feature_std

    def logits(self, z: np.ndarray) -> np.ndarray:
        """Forward pass on already standardized inputs."""
        return forward(self.layers, z)[0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities for raw (unstandardized) feature rows."""
        return softmax(self.logits(self.standardize(x)))

    # plain-text model file -------------------------------------------------
    def dumps(self) -> str:
        fmt = lambda a: " ".join(repr(float(v)) for v in np.ravel(a))  # noqa: E731
        lines = [
            "agripipe-classifier 1",
            f"architecture {self.architecture}",
            f"hidden {self.hidden}",
            f"class_count {self.class_count}",
            f"feature_mean {fmt(self.feature_mean)}",
            f"feature_std {fmt(self.feature_std)}",
        ]
        for i, (w, b) in enumerate(self.layers):
            lines.append(f"layer {i} W {w.shape[0]} {w.shape[1]}")
            lines.append(fmt(w))
            lines.append(f"layer {i} b {b.shape[0]}")
            lines.append(fmt(b))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ClassifierModel":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("agripipe-classifier"):
            raise ValueError("not a classifier model file")
        head = {}
        for ln in lines[1:6]:
            key, _, val = ln.partition(" ")
            head[key] = val
        floats = lambda s: np.array([float(v) for v in s.split()])  # noqa: E731
        layers = []
        rest = lines[6:]
        for i in range(0, len(rest), 4):
            w_head = rest[i].split()
            w = floats(rest[i + 1]).reshape(int(w_head[3]), int(w_head[4]))
            b = floats(rest[i + 3])
            layers.append((w, b))
        return cls(
            head["architecture"],
            layers,
            floats(head["feature_mean"]),
            floats(head["feature_std"]),
            int(head["class_count"]),
        )

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(layers, z: np.ndarray):
    """Return (logits, cache of per-layer inputs and pre-activations)."""
    cache = []
    h = z
    for i, (w, b) in enumerate(layers):
        pre = h @ w + b
        cache.append((h, pre))
        h = pre if i == len(layers) - 1 else np.maximum(pre, 0.0)
    return h, cache


def loss_and_grads(layers, z: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean cross-entropy (+ l2/2 ||W||^2) and its gradients w.r.t. every (W, b)."""
    logits, cache = forward(layers, z)
    n = z.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(n), y]))
    loss += 0.5 * l2 * sum(float((w * w).sum()) for w, _ in layers)

    delta = softmax(logits)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        h, pre = cache[i]
        w, _ = layers[i]
        grads[i] = (h.T @ delta + l2 * w, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (cache[i - 1][1] > 0)
    return loss, grads


def _collect(tiles: Sequence[Tile]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for t in tiles:
        m = t.valid
        xs.append(t.features[:, m].T)
        ys.append(t.labels[m])
    if not xs:
        return np.zeros((0, N_CHANNELS), np.float32), np.zeros(0, np.int64)
    return np.concatenate(xs), np.concatenate(ys).astype(np.int64)


def train(tiles: Sequence[Tile], config: TrainConfig) -> ClassifierModel:
    """Fit on every valid pixel of ``tiles``."""
    x, y = _collect(tiles)
    return train_pixels(x, y, config)


def train_pixels(x: np.ndarray, y: np.ndarray, config: TrainConfig) -> ClassifierModel:
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != N_CHANNELS:
        raise ChannelMismatch(f"expected (n, {N_CHANNELS}) features, got {x.shape}")
    present = np.bincount(y, minlength=N_CLASSES) if y.size else np.zeros(N_CLASSES, int)
    missing = [c for c in range(N_CLASSES) if present[c] == 0]
    if missing:
        raise MissingClass(f"no training pixels for classes {missing}")

    mean = x.mean(axis=0, dtype=np.float64)
    std = x.std(axis=0, dtype=np.float64)
    std = np.where(std > 1e-12, std, 1.0)
    model = ClassifierModel.initialize(config, mean, std)
    z = model.standardize(x)
    layers = [(w.copy(), b.copy()) for w, b in model.layers]
    rng = np.random.default_rng(config.seed)

    initial, _ = loss_and_grads(layers, z, y, config.l2)
    history = [initial]
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(layers, z[idx], y[idx], config.l2)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} in epoch {epoch}")
            total += loss * len(idx)
            for (w, b), (gw, gb) in zip(layers, grads):
                w -= config.learning_rate * gw
                b -= config.learning_rate * gb
        history.append(total / n)
        logger.info("epoch %d: mean loss %.5f", epoch + 1, total / n)

    final, _ = loss_and_grads(layers, z, y, config.l2)
    if not np.isfinite(final):
        raise DivergedLoss(f"final loss is {final}")
    model.layers = layers
    model.history = history + [final]
    return model


def predict(model: ClassifierModel, stack: FeatureStack) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel argmax labels (H, W) and probabilities (3, H, W).

    Invalid pixels get uniform probabilities and the background label.
    """
    ch = stack.channels
    if ch.shape[0] != N_CHANNELS or len(model.feature_mean) != N_CHANNELS:
        raise ChannelMismatch(f"stack has {ch.shape[0]} channels, model expects {N_CHANNELS}")
    h, w = stack.shape
    flat = ch.reshape(N_CHANNELS, -1).T
    probs = model.predict_proba(flat)
    invalid = ~stack.valid.ravel()
    probs[invalid] = 1.0 / model.class_count
    labels = np.argmax(probs, axis=1).astype(np.uint8)
    labels[invalid] = 0
    return labels.reshape(h, w), probs.T.reshape(model.class_count, h, w)


def gradient_check(
    model: ClassifierModel,
    x: np.ndarray,
    y: np.ndarray,
    step: float = 1e-4,
    l2: float = 0.0,
) -> float:
    """Max relative error between backprop and central differences over all parameters.

    ``x`` holds raw feature rows and is standardized with the model's stats.
    Parameters whose +/- step would flip the sign of any ReLU pre-activation
    are skipped, since the loss is not differentiable across that kink.
    """
    z = model.standardize(x)
    y = np.asarray(y, dtype=np.int64)
    if z.shape[0] == 0:
        raise ValueError("gradient check needs a non-empty batch")
    layers = [(w.astype(np.float64).copy(), b.astype(np.float64).copy()) for w, b in model.layers]
    _, grads = loss_and_grads(layers, z, y, l2)
    base_signs = [pre > 0 for _, pre in forward(layers, z)[1][:-1]]

    def crosses_kink() -> bool:
        pres = forward(layers, z)[1][:-1]
        return any(not np.array_equal(p > 0, s) for (_, p), s in zip(pres, base_signs))

    worst = 0.0
    for li, (w, b) in enumerate(layers):
        for param, grad in ((w, grads[li][0]), (b, grads[li][1])):
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + step
                plus, _ = loss_and_grads(layers, z, y, l2)
                kink = crosses_kink()
                param[idx] = orig - step
                minus, _ = loss_and_grads(layers, z, y, l2)
                kink = kink or crosses_kink()
                param[idx] = orig
                if kink:
                    continue
                numeric = (plus - minus) / (2 * step)
                analytic = grad[idx]
                denom = max(abs(numeric), abs(analytic), 1e-8)
                worst = max(worst, abs(numeric - analytic) / denom)
    return worst
