"""2-D affine transforms and bilinear inverse-mapping warps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import IoFailure, SingularTransform
from ..raster import Band

_DET_EPS = 1e-12
# fractional offsets closer than this to a pixel centre are snapped onto it
_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """Maps (x, y) -> (a x + b y + tx, c x + d y + ty)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape == (3, 3):
            m = m[:2]
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "AffineTransform":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty]])

    @property
    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.matrix[:, :2]))

    @property
    def is_invertible(self) -> bool:
        return abs(self.determinant) > _DET_EPS

    def inverse(self) -> "AffineTransform":
        if not self.is_invertible:
            raise SingularTransform(f"determinant {self.determinant:.3g} is not invertible")
        return AffineTransform(np.linalg.inv(self.homogeneous))

    def compose(self, first: "AffineTransform") -> "AffineTransform":
        """Return ``self ∘ first``: apply ``first``, then ``self``."""
        return AffineTransform(self.homogeneous @ first.homogeneous)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def dumps(self) -> str:
        return " ".join(f"{v:.6f}" for v in self.matrix.ravel()) + "\n"

    @classmethod
    def loads(cls, text: str) -> "AffineTransform":
        vals = [float(t) for t in text.split()]
        if len(vals) != 6:
            raise ValueError(f"expected 6 affine coefficients, got {len(vals)}")
        return cls(np.reshape(vals, (2, 3)))

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "AffineTransform":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc

    def __repr__(self) -> str:
        return f"AffineTransform({self.matrix.tolist()})"


def bilinear_sample(values: np.ndarray, valid: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample ``values`` at float coordinates.

    A sample is valid only if every neighbour carrying non-zero weight is
    inside the raster and valid. Returns (samples float64, valid mask).
    """
    h, w = values.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    # snap near-integer coordinates so exact grid hits need only one neighbour
    up = fx > 1.0 - _SNAP
    x0 = np.where(up, x0 + 1, x0)
    fx = np.where(up | (fx < _SNAP), 0.0, fx)
    up = fy > 1.0 - _SNAP
    y0 = np.where(up, y0 + 1, y0)
    fy = np.where(up | (fy < _SNAP), 0.0, fy)

    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(xs.shape, dtype=np.float64)
    ok = np.ones(xs.shape, dtype=bool)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            weight = wy * wx
            used = weight > 0
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xc = np.clip(xi, 0, w - 1)
            yc = np.clip(yi, 0, h - 1)
            ok &= ~used | (inside & valid[yc, xc])
            out += np.where(used & inside, weight * values[yc, xc], 0.0)
    return out, ok


def warp_band(band: Band, transform: AffineTransform, target_size: tuple[int, int] | None = None) -> Band:
    """Resample ``band`` into a target grid.

    ``transform`` maps source pixel coordinates to target coordinates;
    each target pixel is pulled back through its inverse. ``target_size`` is
    (width, height) and defaults to the source size.
    """
    if not transform.is_invertible:
        raise SingularTransform(f"determinant {transform.determinant:.3g} is not invertible")
    width, height = target_size if target_size is not None else (band.width, band.height)
    inv = transform.inverse().matrix
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    values, ok = bilinear_sample(band.values, band.valid, sx, sy)
    return Band(band.kind, np.where(ok, values, 0.0), ok)
