"""Binary mask primitives: geometry, overlap measures, RLE codec.

Masks are 2-D bool arrays of shape (H, W). Boxes use inclusive pixel
coordinates (x_min, y_min, x_max, y_max).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union; two empty masks have IoU 0 by convention."""
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return inter / union


def overlap_fraction(a: np.ndarray, b: np.ndarray) -> float:
    """|a ∩ b| / |b|: the fraction of b covered by a. Not symmetric."""
    nb = np.count_nonzero(b)
    if nb == 0:
        raise ValueError("overlap_fraction: reference mask is empty")
    return np.count_nonzero(a & b) / nb


def tight_box(mask: np.ndarray) -> Box:
    """Smallest box containing every set pixel. Errors on an empty mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("tight_box: empty mask")
    return Box(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def box_iou(a: Box, b: Box) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def dilate(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    """Chebyshev (8-connected) dilation by `steps` pixels."""
    out = mask.astype(bool).copy()
    for _ in range(steps):
        m = out.copy()
        m[1:, :] |= out[:-1, :]
        m[:-1, :] |= out[1:, :]
        m[:, 1:] |= out[:, :-1]
        m[:, :-1] |= out[:, 1:]
        m[1:, 1:] |= out[:-1, :-1]
        m[1:, :-1] |= out[:-1, 1:]
        m[:-1, 1:] |= out[1:, :-1]
        m[:-1, :-1] |= out[1:, 1:]
        out = m
    return out


def erode(mask: np.ndarray, steps: int = 1) -> np.ndarray:
    """8-connected erosion; pixels outside the frame count as unset."""
    m = mask.astype(bool)
    if steps == 0:
        return m
    padded = np.pad(m, steps, constant_values=False)
    out = ~dilate(~padded, steps)
    return out[steps:-steps, steps:-steps]


def inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Set pixels with an unset 8-neighbor (or on the image border)."""
    m = mask.astype(bool)
    return m & ~erode(m, 1)


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run-length encoding, counts starting with a zeros run."""
    h, w = mask.shape
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return {"counts": [0], "size": [h, w]}
    changes = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"counts": counts, "size": [h, w]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    val = False
    for run in rle["counts"]:
        if val:
            flat[pos : pos + run] = True
        pos += run
        val = not val
    if pos != h * w:
        raise ValueError(f"rle length {pos} does not match size {h}x{w}")
    return flat.reshape(h, w)


def stack_pool(masks) -> np.ndarray:
    """Stack a list of (H, W) bool masks into a (P, H, W) array."""
    return np.stack([np.asarray(m, dtype=bool) for m in masks], axis=0)


def intersection_counts(pool: np.ndarray) -> np.ndarray:
    """(P, P) pairwise intersection pixel counts for a stacked pool."""
    flat = pool.reshape(pool.shape[0], -1).astype(np.float32)
    return (flat @ flat.T).astype(np.int64)


def overlap_fraction_matrix(pool: np.ndarray) -> np.ndarray:
    """ovl[i, l] = |mask_i ∩ mask_l| / |mask_l| for a stacked pool."""
    counts = intersection_counts(pool)
    areas = counts.diagonal().astype(np.float64)
    if (areas == 0).any():
        raise ValueError("pool contains an empty mask")
    return counts / areas[None, :]
