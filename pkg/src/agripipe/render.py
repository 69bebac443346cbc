from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import IoFailure
from .raster import as_label_mask

# background white, crop green, weed red
PALETTE = np.array([(255, 255, 255), (0, 255, 0), (255, 0, 0)], dtype=np.uint8)


def label_colors(mask) -> np.ndarray:
    return PALETTE[as_label_mask(mask)]


def render_map(mask, path) -> None:
    """Write the class map as an RGB PNG, one pixel per mask cell."""
    rgb = label_colors(mask)
    try:
        Image.fromarray(rgb).save(path, format="PNG")
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
