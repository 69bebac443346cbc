"""Chain pairwise affines into one frame and feather-blend captures onto a canvas."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DisconnectedGraph, IoFailure, SingularComposition, SingularTransform
from .parallel import parallel_map
from .raster import Band, MultispectralImage
from .registration.transform import AffineTransform, warp_band

# (i, j, T): T maps pixel coordinates of capture j into the frame of capture i
PairwiseEdge = tuple[int, int, AffineTransform]


@dataclass(frozen=True)
class Canvas:
    width: int
    height: int
    origin_x: int
    origin_y: int


@dataclass(frozen=True)
class MosaicPlan:
    reference_index: int
    transforms: tuple[AffineTransform, ...]  # capture -> reference frame
    canvas: Canvas

    def to_canvas(self, index: int) -> AffineTransform:
        shift = AffineTransform.translation(-self.canvas.origin_x, -self.canvas.origin_y)
        return shift.compose(self.transforms[index])

    def dumps(self) -> str:
        c = self.canvas
        lines = [f"canvas {c.width} {c.height} {c.origin_x} {c.origin_y} reference={self.reference_index}"]
        lines += [" ".join(repr(float(v)) for v in t.matrix.ravel()) for t in self.transforms]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MosaicPlan":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "canvas" or len(head) != 6 or not head[5].startswith("reference="):
            raise ValueError(f"bad mosaic plan header {lines[0]!r}")
        canvas = Canvas(*(int(v) for v in head[1:5]))
        transforms = tuple(AffineTransform.loads(ln) for ln in lines[1:])
        return cls(int(head[5].split("=", 1)[1]), transforms, canvas)

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "MosaicPlan":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc


def plan_mosaic(captures: Sequence[MultispectralImage], pairwise: Sequence[PairwiseEdge]) -> MosaicPlan:
    """Compose pairwise transforms along a breadth-first tree rooted at capture 0."""
    n = len(captures)
    if n == 0:
        raise ValueError("no captures to plan")
    adjacency: dict[int, list[tuple[int, AffineTransform]]] = {i: [] for i in range(n)}
    for i, j, t in pairwise:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) refers to a missing capture")
        if not t.is_invertible:
            raise SingularComposition(f"edge ({i}, {j}) transform is singular")
        adjacency[i].append((j, t))  # j -> i
        adjacency[j].append((i, t.inverse()))  # i -> j

    to_ref: dict[int, AffineTransform] = {0: AffineTransform.identity()}
    queue = deque([0])
    while queue:
        cur = queue.popleft()
        for nb, nb_to_cur in sorted(adjacency[cur], key=lambda e: e[0]):
            if nb in to_ref:
                continue
            composed = to_ref[cur].compose(nb_to_cur)
            if not composed.is_invertible:
                raise SingularComposition(f"chain to capture {nb} is singular")
            to_ref[nb] = composed
            queue.append(nb)
    if len(to_ref) != n:
        missing = sorted(set(range(n)) - set(to_ref))
        raise DisconnectedGraph(f"captures {missing} are not connected to capture 0")

    corners = []
    for k, cap in enumerate(captures):
        w, h = cap.width, cap.height
        corners.append(to_ref[k].apply([[0, 0], [w, 0], [0, h], [w, h]]))
    pts = np.vstack(corners)
    # tolerate float noise from chained products before rounding outward
    x0 = math.floor(pts[:, 0].min() + 1e-9)
    y0 = math.floor(pts[:, 1].min() + 1e-9)
    x1 = math.ceil(pts[:, 0].max() - 1e-9)
    y1 = math.ceil(pts[:, 1].max() - 1e-9)
    canvas = Canvas(x1 - x0, y1 - y0, x0, y0)
    return MosaicPlan(0, tuple(to_ref[k] for k in range(n)), canvas)


def feather_weights(valid: np.ndarray) -> np.ndarray:
    """Euclidean distance from each valid pixel to the nearest invalid or outside pixel."""
    padded = np.pad(valid, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def _ordered_sum(stack: np.ndarray) -> np.ndarray:
    # sorting along the capture axis makes the float sum independent of capture order
    return np.sort(stack, axis=0).sum(axis=0)


def render_mosaic(captures: Sequence[MultispectralImage], plan: MosaicPlan, jobs: int = 1) -> MultispectralImage:
    """Warp every capture onto the canvas and blend overlaps with feathering weights."""
    if len(captures) != len(plan.transforms):
        raise ValueError("plan does not match the number of captures")
    kinds = [k for k in captures[0].kinds if all(c.has(k) for c in captures)]
    size = (plan.canvas.width, plan.canvas.height)
    to_canvas = []
    for k in range(len(captures)):
        t = plan.to_canvas(k)
        if not t.is_invertible:
            raise SingularTransform(f"capture {k} transform is singular")
        to_canvas.append(t)

    def blend(kind) -> Band:
        num, den = [], []
        for cap, t in zip(captures, to_canvas):
            band = cap.band(kind)
            warped = warp_band(band, t, size)
            weight = warp_band(Band(kind, feather_weights(band.valid)), t, size)
            w = np.where(warped.valid & weight.valid, weight.values.astype(np.float64), 0.0)
            num.append(w * warped.values)
            den.append(w)
        total = _ordered_sum(np.stack(den))
        valid = total > 0
        out = np.divide(_ordered_sum(np.stack(num)), total, out=np.zeros_like(total), where=valid)
        return Band(kind, out, valid)

    return MultispectralImage(tuple(parallel_map(blend, kinds, jobs)))
