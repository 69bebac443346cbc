from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .keypoints import Keypoint


@dataclass(frozen=True)
class MatchPair:
    index_a: int
    index_b: int
    distance: float
    # ratio used when the pair was accepted
    ratio: float = 0.75


def _descriptor_matrix(kps: Sequence[Keypoint]) -> np.ndarray:
    return np.stack([np.asarray(k.descriptor, dtype=np.float64) for k in kps])


def match_descriptors(a: Sequence[Keypoint], b: Sequence[Keypoint], ratio: float = 0.75) -> list[MatchPair]:
    """Nearest-neighbour matching with the distance-ratio test.

    A keypoint of ``a`` is matched to its nearest neighbour in ``b`` only if
    that distance is below ``ratio`` times the second-nearest distance. With
    a single candidate in ``b`` the second distance is taken as infinite.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if len(a) == 0 or len(b) == 0:
        return []
    da, db = _descriptor_matrix(a), _descriptor_matrix(b)
    sq = (da**2).sum(1)[:, None] + (db**2).sum(1)[None, :] - 2.0 * da @ db.T
    dist = np.sqrt(np.maximum(sq, 0.0))
    # the expanded form ranks candidates; chosen distances are recomputed exactly
    exact = lambda j: np.linalg.norm(da - db[j], axis=1)  # noqa: E731
    if len(b) == 1:
        nearest = np.zeros(len(a), dtype=np.int64)
        d1 = exact(nearest)
        d2 = np.full(len(a), np.inf)
    else:
        order = np.argsort(dist, axis=1, kind="stable")[:, :2]
        nearest = order[:, 0]
        d1 = exact(order[:, 0])
        d2 = exact(order[:, 1])
    return [
        MatchPair(int(i), int(nearest[i]), float(d1[i]), ratio)
        for i in range(len(a))
        if d1[i] < ratio * d2[i]
    ]
