"""Static rendering of sample evolution: one PPM panel per scene.

Each panel row is one outer iteration; within a row the first cell shows
the raw scene, the middle cells show the K conditional sample labelings
and the last cell shows the decoded predictions at that point. Binary
PPM (P6) needs no image library and opens everywhere.
"""

import os

import numpy as np

from .synthgen import PALETTE

CELL_SCALE = 2  # nearest-neighbor upscaling factor per cell
MARGIN = 2  # white separator between cells, in output pixels
LABEL_ALPHA = 0.55
DIM = 0.45


def write_ppm(path: str, img: np.ndarray) -> None:
    """img: (H, W, 3) uint8."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected an (H, W, 3) uint8 array")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _base(rec, dim: float = 1.0) -> np.ndarray:
    return np.clip(rec.image * dim, 0.0, 1.0).copy()


def _blend(img: np.ndarray, mask: np.ndarray, color, alpha: float) -> None:
    img[mask] = (1.0 - alpha) * img[mask] + alpha * np.asarray(color)


def labeling_image(rec, labels) -> np.ndarray:
    """Dimmed scene with every selected proposal tinted by its class color."""
    img = _base(rec, DIM)
    for u, c in enumerate(labels):
        if c > 0:
            _blend(img, rec.pool[u], PALETTE[(c - 1) % len(PALETTE)],
                   LABEL_ALPHA)
    return img


def decode_image(rec, decoded) -> np.ndarray:
    """Dimmed scene with decoded predictions tinted by class color.

    decoded entries may be InstancePrediction objects or plain dicts with
    proposal_index / class_id keys.
    """
    img = _base(rec, DIM)
    for d in decoded:
        if isinstance(d, dict):
            u, c = d["proposal_index"], d["class_id"]
        else:
            u, c = d.proposal_index, d.class_id
        _blend(img, rec.pool[u], PALETTE[(c - 1) % len(PALETTE)], LABEL_ALPHA)
    return img


def _to_cell(img: np.ndarray) -> np.ndarray:
    out = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return np.repeat(np.repeat(out, CELL_SCALE, axis=0), CELL_SCALE, axis=1)


def compose_grid(cells: list) -> np.ndarray:
    """cells: list of rows, each a list of equally sized uint8 images."""
    ch, cw = cells[0][0].shape[:2]
    rows, cols = len(cells), max(len(r) for r in cells)
    height = rows * ch + (rows + 1) * MARGIN
    width = cols * cw + (cols + 1) * MARGIN
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    for i, row in enumerate(cells):
        for j, cell in enumerate(row):
            y = MARGIN + i * (ch + MARGIN)
            x = MARGIN + j * (cw + MARGIN)
            canvas[y:y + ch, x:x + cw] = cell
    return canvas


def scene_panel(rec, iterations: list) -> np.ndarray:
    """iterations: dicts with keys "samples" (list of labelings) and
    "decode" (list of prediction entries); one grid row each."""
    rows = []
    for entry in iterations:
        row = [_to_cell(_base(rec))]
        for labels in entry["samples"]:
            row.append(_to_cell(labeling_image(rec, labels)))
        row.append(_to_cell(decode_image(rec, entry["decode"])))
        rows.append(row)
    return compose_grid(rows)


def render_predictions(pred_obj: dict, records_by_id: dict,
                       out_dir: str) -> list:
    """One panel file per scene in the prediction dump; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for entry in pred_obj["scenes"]:
        rec = records_by_id[entry["scene_id"]]
        iterations = list(entry.get("iterations", []))
        if "final" in entry:
            iterations.append(entry["final"])
        if not iterations:
            continue
        panel = scene_panel(rec, iterations)
        path = os.path.join(out_dir, f"scene_{entry['scene_id']:04d}.ppm")
        write_ppm(path, panel)
        paths.append(path)
    return paths
