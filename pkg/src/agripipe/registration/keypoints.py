"""Scale-space keypoints (difference-of-Gaussians) with gradient-histogram descriptors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..errors import ImageTooSmall
from ..raster import Band

MIN_SIZE = 32
DESCRIPTOR_WIDTH = 4
DESCRIPTOR_BINS = 8
DESCRIPTOR_LENGTH = DESCRIPTOR_WIDTH * DESCRIPTOR_WIDTH * DESCRIPTOR_BINS


@dataclass(frozen=True)
class DetectorConfig:
    octaves: int = 3
    intervals: int = 3
    sigma: float = 1.6
    # blur already present in the input image
    init_sigma: float = 0.5
    # on |DoG| after scaling the image to [0, 1]
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    border: int = 5
    refine_steps: int = 5
    orientation_bins: int = 36
    orientation_peak_ratio: float = 0.8
    orientation_sigma_factor: float = 1.5
    descriptor_scale_factor: float = 3.0
    descriptor_clip: float = 0.2


@dataclass(frozen=True, eq=False)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    descriptor: np.ndarray = field(repr=False)
    response: float = 0.0
    octave: int = 0


@dataclass
class _Octave:
    index: int
    gaussians: list  # intervals + 3 blurred images
    dog: np.ndarray  # (intervals + 2, h, w)
    grad_mag: dict = field(default_factory=dict)
    grad_ang: dict = field(default_factory=dict)

    def gradients(self, layer: int):
        if layer not in self.grad_mag:
            g = self.gaussians[layer]
            dx = np.zeros_like(g)
            dy = np.zeros_like(g)
            dx[:, 1:-1] = g[:, 2:] - g[:, :-2]
            dy[1:-1, :] = g[2:, :] - g[:-2, :]
            self.grad_mag[layer] = np.hypot(dx, dy)
            self.grad_ang[layer] = np.arctan2(dy, dx)
        return self.grad_mag[layer], self.grad_ang[layer]


def _prepare(band: Band) -> np.ndarray | None:
    v = band.values.astype(np.float64)
    if not band.valid.any():
        return None
    lo = float(v[band.valid].min())
    hi = float(v[band.valid].max())
    if hi - lo <= 0:
        return None
    img = (v - lo) / (hi - lo)
    if not band.valid.all():
        img = np.where(band.valid, img, float(img[band.valid].mean()))
    return img


def _build_pyramid(img: np.ndarray, cfg: DetectorConfig) -> list[_Octave]:
    s = cfg.intervals
    k = 2.0 ** (1.0 / s)
    base = ndimage.gaussian_filter(img, np.sqrt(max(cfg.sigma**2 - cfg.init_sigma**2, 0.01)), mode="nearest")
    steps = [np.sqrt((cfg.sigma * k**i) ** 2 - (cfg.sigma * k ** (i - 1)) ** 2) for i in range(1, s + 3)]
    octaves = []
    current = base
    for o in range(cfg.octaves):
        if min(current.shape) < 2 * cfg.border + 3:
            break
        gaussians = [current]
        for step in steps:
            gaussians.append(ndimage.gaussian_filter(gaussians[-1], step, mode="nearest"))
        dog = np.stack([b - a for a, b in zip(gaussians[:-1], gaussians[1:])])
        octaves.append(_Octave(o, gaussians, dog))
        current = gaussians[s][::2, ::2]
    return octaves


def _derivatives(dog: np.ndarray, layer, row, col):
    """Gradient and Hessian of the DoG volume at integer positions (vectorized)."""
    d = lambda dl, dr, dc: dog[layer + dl, row + dr, col + dc]  # noqa: E731
    c = d(0, 0, 0)
    gx = 0.5 * (d(0, 0, 1) - d(0, 0, -1))
    gy = 0.5 * (d(0, 1, 0) - d(0, -1, 0))
    gs = 0.5 * (d(1, 0, 0) - d(-1, 0, 0))
    hxx = d(0, 0, 1) + d(0, 0, -1) - 2 * c
    hyy = d(0, 1, 0) + d(0, -1, 0) - 2 * c
    hss = d(1, 0, 0) + d(-1, 0, 0) - 2 * c
    hxy = 0.25 * (d(0, 1, 1) - d(0, 1, -1) - d(0, -1, 1) + d(0, -1, -1))
    hxs = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1))
    hys = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0))
    grad = np.stack([gx, gy, gs], axis=-1)
    hess = np.stack(
        [
            np.stack([hxx, hxy, hxs], axis=-1),
            np.stack([hxy, hyy, hys], axis=-1),
            np.stack([hxs, hys, hss], axis=-1),
        ],
        axis=-2,
    )
    return c, grad, hess


def _localize(octave: _Octave, cfg: DetectorConfig):
    """Find, refine and filter DoG extrema of one octave.

    Returns arrays (layer, row, col, offset[x, y, s], response).
    """
    dog = octave.dog
    n_layers, h, w = dog.shape
    s = cfg.intervals
    b = cfg.border
    pre = 0.5 * cfg.contrast_threshold
    is_max = dog == ndimage.maximum_filter(dog, size=3, mode="nearest")
    is_min = dog == ndimage.minimum_filter(dog, size=3, mode="nearest")
    cand = (is_max | is_min) & (np.abs(dog) > pre)
    cand[0] = cand[-1] = False
    cand[:, :b, :] = cand[:, h - b:, :] = False
    cand[:, :, :b] = cand[:, :, w - b:] = False
    layer, row, col = np.nonzero(cand)

    alive = np.ones(layer.shape, dtype=bool)
    converged = np.zeros(layer.shape, dtype=bool)
    offset = np.zeros((layer.size, 3))
    for _ in range(cfg.refine_steps):
        todo = alive & ~converged
        if not todo.any():
            break
        idx = np.nonzero(todo)[0]
        _, grad, hess = _derivatives(dog, layer[idx], row[idx], col[idx])
        det = np.linalg.det(hess)
        solvable = np.abs(det) > 1e-14
        step = np.zeros((idx.size, 3))
        if solvable.any():
            step[solvable] = -np.linalg.solve(hess[solvable], grad[solvable][..., None])[..., 0]
        alive[idx[~solvable]] = False
        offset[idx] = step
        small = np.all(np.abs(step) < 0.5, axis=1) & solvable
        converged[idx[small]] = True
        move = idx[~small & solvable]
        if move.size:
            col[move] += np.round(step[~small & solvable, 0]).astype(np.int64)
            row[move] += np.round(step[~small & solvable, 1]).astype(np.int64)
            layer[move] += np.round(step[~small & solvable, 2]).astype(np.int64)
            inside = (
                (layer[move] >= 1) & (layer[move] <= s)
                & (row[move] >= b) & (row[move] < h - b)
                & (col[move] >= b) & (col[move] < w - b)
            )
            alive[move[~inside]] = False
    keep = alive & converged
    layer, row, col, offset = layer[keep], row[keep], col[keep], offset[keep]
    if layer.size == 0:
        return layer, row, col, offset, np.zeros(0)

    c, grad, hess = _derivatives(dog, layer, row, col)
    response = c + 0.5 * np.einsum("ij,ij->i", grad, offset)
    txx, tyy, txy = hess[:, 0, 0], hess[:, 1, 1], hess[:, 0, 1]
    trace = txx + tyy
    det = txx * tyy - txy**2
    r = cfg.edge_ratio
    ok = (np.abs(response) >= cfg.contrast_threshold) & (det > 0) & (trace**2 * r < (r + 1) ** 2 * det)
    return layer[ok], row[ok], col[ok], offset[ok], response[ok]


def _orientations(octave: _Octave, layer: int, x: float, y: float, sigma_oct: float, cfg: DetectorConfig):
    mag, ang = octave.gradients(layer)
    h, w = mag.shape
    sig = cfg.orientation_sigma_factor * sigma_oct
    radius = int(round(3 * sig))
    xi, yi = int(round(x)), int(round(y))
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    if x0 > x1 or y0 > y1:
        return []
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    weight = np.exp(-((xx - xi) ** 2 + (yy - yi) ** 2) / (2 * sig**2))
    nb = cfg.orientation_bins
    bins = np.floor(nb * (ang[y0:y1 + 1, x0:x1 + 1] + np.pi) / (2 * np.pi)).astype(np.int64) % nb
    hist = np.bincount(bins.ravel(), weights=(weight * mag[y0:y1 + 1, x0:x1 + 1]).ravel(), minlength=nb)
    # circular [1 4 6 4 1] / 16 smoothing
    hist = (
        6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + np.roll(hist, 2) + np.roll(hist, -2)
    ) / 16.0
    peak = hist.max()
    if peak <= 0:
        return []
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    result = []
    for i in np.nonzero((hist > left) & (hist > right) & (hist >= cfg.orientation_peak_ratio * peak))[0]:
        denom = left[i] - 2 * hist[i] + right[i]
        shift = 0.5 * (left[i] - right[i]) / denom if denom != 0 else 0.0
        theta = (i + 0.5 + shift) * 2 * np.pi / nb - np.pi
        result.append(float(np.arctan2(np.sin(theta), np.cos(theta))))
    return result


def _descriptor(octave: _Octave, layer: int, x: float, y: float, sigma_oct: float, theta: float, cfg: DetectorConfig):
    mag, ang = octave.gradients(layer)
    h, w = mag.shape
    d, nb = DESCRIPTOR_WIDTH, DESCRIPTOR_BINS
    hist_width = cfg.descriptor_scale_factor * sigma_oct
    radius = int(round(hist_width * np.sqrt(2) * (d + 1) * 0.5))
    xi, yi = int(round(x)), int(round(y))
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    px, py = xi + xx, yi + yy
    inside = (px >= 1) & (px < w - 1) & (py >= 1) & (py < h - 1)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    dx = px - x
    dy = py - y
    x_rot = (cos_t * dx + sin_t * dy) / hist_width
    y_rot = (-sin_t * dx + cos_t * dy) / hist_width
    rbin = y_rot + d / 2 - 0.5
    cbin = x_rot + d / 2 - 0.5
    use = inside & (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    if not use.any():
        return None
    rbin, cbin = rbin[use], cbin[use]
    g_mag = mag[py[use], px[use]] * np.exp(-(x_rot[use] ** 2 + y_rot[use] ** 2) / (0.5 * d * d))
    obin = ((ang[py[use], px[use]] - theta) % (2 * np.pi)) * nb / (2 * np.pi)

    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    hist = np.zeros((d + 2, d + 2, nb))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nb), g_mag * wr * wc * wo)
    vec = hist[1:-1, 1:-1].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, cfg.descriptor_clip)
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    return vec / norm


def detect_keypoints(band: Band, config: DetectorConfig | None = None) -> list[Keypoint]:
    """Detect scale-space extrema and describe each with a 4x4x8 orientation histogram.

    The band is min-max scaled to [0, 1] over its valid pixels first, so
    results do not depend on the absolute brightness scale. Keypoints close
    to invalid pixels are discarded.
    """
    cfg = config or DetectorConfig()
    if band.height < MIN_SIZE or band.width < MIN_SIZE:
        raise ImageTooSmall(f"band is {band.width}x{band.height}, need at least {MIN_SIZE}x{MIN_SIZE}")
    img = _prepare(band)
    if img is None:
        return []
    dist_to_invalid = None
    if not band.valid.all():
        dist_to_invalid = ndimage.distance_transform_edt(band.valid)

    keypoints = []
    s = cfg.intervals
    for octave in _build_pyramid(img, cfg):
        layer, row, col, offset, response = _localize(octave, cfg)
        factor = 2.0**octave.index
        for li, ri, ci, off, resp in zip(layer, row, col, offset, response):
            sigma_oct = cfg.sigma * 2.0 ** ((li + off[2]) / s)
            ox, oy = ci + off[0], ri + off[1]
            x, y = ox * factor, oy * factor
            if not (0 <= x <= band.width - 1 and 0 <= y <= band.height - 1):
                continue
            if dist_to_invalid is not None:
                reach = cfg.descriptor_scale_factor * sigma_oct * factor * (DESCRIPTOR_WIDTH + 1) * 0.75
                if dist_to_invalid[int(round(y)), int(round(x))] <= reach:
                    continue
            for theta in _orientations(octave, int(li), ox, oy, sigma_oct, cfg):
                desc = _descriptor(octave, int(li), ox, oy, sigma_oct, theta, cfg)
                if desc is None:
                    continue
                keypoints.append(
                    Keypoint(
                        x=float(x),
                        y=float(y),
                        scale=float(sigma_oct * factor),
                        orientation=theta,
                        descriptor=desc,
                        response=float(resp),
                        octave=octave.index,
                    )
                )
    return keypoints
