"""Synthetic scene and proposal-pool generation.

Scenes are small RGB rasters with colored shapes on a gray background.
Class identity is carried by color; shape family varies freely. The edge
map marks ground-truth instance boundaries at 1.0 plus sparse noise.
Seeds are contiguous sub-regions of each instance, standing in for the
salient-part cues a weak-supervision pipeline would start from.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .adjacency import build_adjacency
from .masks import Box, box_iou, erode, dilate, inner_boundary, stack_pool, tight_box
from .scenes import Annotation, GroundTruthInstance, SceneRecord, Seed, rebuild_with_pool

# class colors; background is gray
PALETTE = np.array(
    [
        [0.85, 0.25, 0.25],
        [0.20, 0.70, 0.30],
        [0.25, 0.35, 0.85],
        [0.80, 0.70, 0.20],
        [0.70, 0.30, 0.80],
    ]
)
BACKGROUND = np.array([0.5, 0.5, 0.5])


class PlacementError(Exception):
    pass


class EmptyPoolError(Exception):
    pass


@dataclass
class SceneConfig:
    height: int = 48
    width: int = 48
    num_classes: int = 3
    min_objects: int = 1
    max_objects: int = 3
    shape_families: tuple = ("rect", "ellipse", "ell")
    min_extent: int = 12
    max_extent: int = 20
    max_overlap_iou: float = 0.0
    margin: int = 3
    color_noise: float = 0.04
    edge_noise_density: float = 0.01
    edge_noise_amplitude: float = 0.2
    seed_fraction: tuple = (0.25, 0.45)
    max_place_attempts: int = 200

    def __post_init__(self):
        if self.height > 128 or self.width > 128:
            raise ValueError("scene dimensions are capped at 128")
        if self.num_classes > 5:
            raise ValueError("at most 5 classes supported")


@dataclass
class ProposalConfig:
    include_gt: bool = True
    erode_px: int = 2
    splits: int = 2
    dilate_variant: bool = True
    dilate_px: int = 2
    shift_variant: bool = True
    shift_px: int = 3
    distractor_count: int = 3
    distractor_extent: tuple = (6, 11)
    seed_filter: bool = True
    min_area: int = 8
    p_target: int = 64
    dilation: int = 1


def _draw_shape(rng, cfg: SceneConfig):
    """Rasterize one random shape fully inside the frame."""
    h, w = cfg.height, cfg.width
    family = cfg.shape_families[rng.integers(len(cfg.shape_families))]
    ext_y = int(rng.integers(cfg.min_extent, cfg.max_extent + 1))
    ext_x = int(rng.integers(cfg.min_extent, cfg.max_extent + 1))
    cy = int(rng.integers(cfg.margin + ext_y // 2, h - cfg.margin - ext_y // 2))
    cx = int(rng.integers(cfg.margin + ext_x // 2, w - cfg.margin - ext_x // 2))
    ys, xs = np.mgrid[0:h, 0:w]
    if family == "rect":
        mask = (np.abs(ys - cy) <= ext_y // 2) & (np.abs(xs - cx) <= ext_x // 2)
    elif family == "ellipse":
        ry = max(ext_y / 2.0, 1.0)
        rx = max(ext_x / 2.0, 1.0)
        mask = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    elif family == "ell":
        mask = (np.abs(ys - cy) <= ext_y // 2) & (np.abs(xs - cx) <= ext_x // 2)
        # carve one quadrant out of the rectangle
        qy = rng.integers(2)
        qx = rng.integers(2)
        cut_y = (ys < cy) if qy else (ys >= cy)
        cut_x = (xs < cx) if qx else (xs >= cx)
        mask = mask & ~(cut_y & cut_x)
    else:
        raise ValueError(f"unknown shape family {family!r}")
    return mask


def _grow_seed(rng, mask: np.ndarray, fraction: float) -> np.ndarray:
    """Contiguous sub-region of `mask` covering roughly `fraction` of it.

    Breadth-first growth from the set pixel nearest the centroid, so the
    seed sits in the salient middle of the object.
    """
    ys, xs = np.nonzero(mask)
    target = max(1, int(round(fraction * ys.size)))
    cy, cx = ys.mean(), xs.mean()
    start = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
    seed = np.zeros_like(mask)
    seen = np.zeros_like(mask)
    queue = deque([(int(ys[start]), int(xs[start]))])
    seen[ys[start], xs[start]] = True
    count = 0
    h, w = mask.shape
    while queue and count < target:
        y, x = queue.popleft()
        seed[y, x] = True
        count += 1
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                queue.append((ny, nx))
    return seed


_SCENE_RETRIES = 32


def _place_objects(cfg: SceneConfig, rng) -> list:
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    gt = []
    for _ in range(n_obj):
        class_id = int(rng.integers(1, cfg.num_classes + 1))
        for _attempt in range(cfg.max_place_attempts):
            mask = _draw_shape(rng, cfg)
            inter_ok = all(
                (np.count_nonzero(mask & g.mask) / np.count_nonzero(mask | g.mask))
                <= cfg.max_overlap_iou
                for g in gt
            )
            if inter_ok:
                gt.append(GroundTruthInstance(class_id, mask))
                break
        else:
            raise PlacementError(
                f"could not place object {len(gt) + 1} after "
                f"{cfg.max_place_attempts} attempts"
            )
    return gt


def gen_scene(cfg: SceneConfig, seed: int, scene_id: int = 0) -> SceneRecord:
    """Deterministic scene from (seed, scene_id); pool starts empty.

    A crowded draw (several large objects that cannot coexist without
    overlap) is redrawn from a fresh stream keyed by the attempt index,
    so the mapping (seed, scene_id) -> scene stays deterministic.
    """
    h, w = cfg.height, cfg.width
    gt = None
    rng = None
    last_exc = None
    for redraw in range(_SCENE_RETRIES):
        rng = np.random.default_rng(
            np.random.SeedSequence((seed, scene_id, 0xA11CE, redraw)))
        try:
            gt = _place_objects(cfg, rng)
            break
        except PlacementError as exc:
            last_exc = exc
    if gt is None:
        raise PlacementError(
            f"scene {scene_id}: {last_exc} (after {_SCENE_RETRIES} redraws)")

    image = np.empty((h, w, 3), dtype=np.float32)
    image[:] = BACKGROUND
    edges = np.zeros((h, w), dtype=np.float32)
    for g in gt:
        image[g.mask] = PALETTE[g.class_id - 1]
        edges[inner_boundary(g.mask)] = 1.0
    image += rng.normal(0.0, cfg.color_noise, size=image.shape).astype(np.float32)
    np.clip(image, 0.0, 1.0, out=image)

    n_noise = int(round(cfg.edge_noise_density * h * w))
    if n_noise:
        ys = rng.integers(0, h, size=n_noise)
        xs = rng.integers(0, w, size=n_noise)
        edges[ys, xs] += rng.uniform(0.0, cfg.edge_noise_amplitude, size=n_noise)
        np.clip(edges, 0.0, 1.0, out=edges)

    presence = np.zeros(cfg.num_classes, dtype=np.int8)
    boxes = []
    seeds = []
    for g in gt:
        presence[g.class_id - 1] = 1
        boxes.append((g.class_id, tight_box(g.mask)))
        frac = rng.uniform(*cfg.seed_fraction)
        seeds.append(Seed(g.class_id, _grow_seed(rng, g.mask, frac)))

    empty_pool = np.zeros((0, h, w), dtype=bool)
    return SceneRecord(
        scene_id=scene_id,
        width=w,
        height=h,
        num_classes=cfg.num_classes,
        image=image,
        edges=edges,
        gt=gt,
        annotation=Annotation(presence=presence, boxes=boxes),
        seeds=seeds,
        pool=empty_pool,
        adjacency=build_adjacency(empty_pool, edges),
    )


def _split_parts(core: np.ndarray, pivot, angle: float):
    """Cut `core` in two along a line through `pivot` at `angle`."""
    h, w = core.shape
    ys, xs = np.mgrid[0:h, 0:w]
    side = (xs - pivot[1]) * np.cos(angle) + (ys - pivot[0]) * np.sin(angle)
    return core & (side >= 0), core & (side < 0)


def _shift_mask(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    ys = ys + dy
    xs = xs + dx
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    out[ys[keep], xs[keep]] = True
    return out


def gen_proposals(rec: SceneRecord, cfg: ProposalConfig, seed: int) -> SceneRecord:
    """Attach a proposal pool to a scene: gt masks, perturbed variants,
    background distractors; optionally filtered to overlap a seed.

    Part variants are cut from the eroded instance so their contact bands
    with the full mask (and with each other) avoid the drawn boundary ring;
    this requires erode_px > dilation.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, rec.scene_id, 0xB0B)))
    candidates = []
    for g, own_seed in zip(rec.gt, rec.seeds):
        if cfg.include_gt:
            candidates.append(g.mask)
        core = erode(g.mask, cfg.erode_px)
        if core.any():
            candidates.append(core)
            if (own_seed.mask & core).any():
                sy, sx = np.nonzero(own_seed.mask & core)
            else:
                sy, sx = np.nonzero(core)
            pivot = (sy.mean(), sx.mean())
            for _ in range(cfg.splits):
                angle = rng.uniform(0.0, np.pi)
                a, b = _split_parts(core, pivot, angle)
                candidates.extend((a, b))
        if cfg.dilate_variant:
            candidates.append(dilate(g.mask, cfg.dilate_px))
        if cfg.shift_variant:
            dy = int(rng.integers(-cfg.shift_px, cfg.shift_px + 1))
            dx = int(rng.integers(-cfg.shift_px, cfg.shift_px + 1))
            candidates.append(_shift_mask(g.mask, dy, dx))

    gt_union = np.zeros((rec.height, rec.width), dtype=bool)
    for g in rec.gt:
        gt_union |= g.mask
    dcfg = SceneConfig(
        height=rec.height,
        width=rec.width,
        num_classes=rec.num_classes,
        min_extent=cfg.distractor_extent[0],
        max_extent=cfg.distractor_extent[1],
        margin=1,
    )
    placed = 0
    for _ in range(cfg.distractor_count * 20):
        if placed >= cfg.distractor_count:
            break
        blob = _draw_shape(rng, dcfg)
        if np.count_nonzero(blob & gt_union) / np.count_nonzero(blob) <= 0.25:
            candidates.append(blob)
            placed += 1

    seen = set()
    kept = []
    for m in candidates:
        if np.count_nonzero(m) < cfg.min_area:
            continue
        key = m.tobytes()
        if key in seen:
            continue
        seen.add(key)
        kept.append(m)
    if cfg.seed_filter:
        seed_union = np.zeros((rec.height, rec.width), dtype=bool)
        for s in rec.seeds:
            seed_union |= s.mask
        kept = [m for m in kept if (m & seed_union).any()]
    kept = kept[: cfg.p_target]
    if not kept:
        raise EmptyPoolError(f"scene {rec.scene_id}: no proposals survived")

    pool = stack_pool(kept)
    return SceneRecord(
        scene_id=rec.scene_id,
        width=rec.width,
        height=rec.height,
        num_classes=rec.num_classes,
        image=rec.image,
        edges=rec.edges,
        gt=rec.gt,
        annotation=rec.annotation,
        seeds=rec.seeds,
        pool=pool,
        adjacency=build_adjacency(pool, rec.edges, dilation=cfg.dilation),
    )


def filter_by_boxes(pool: np.ndarray, boxes, min_iou: float) -> np.ndarray:
    """Indices of proposals whose tight box matches any annotation box."""
    keep = []
    for i in range(pool.shape[0]):
        tb = tight_box(pool[i])
        if any(box_iou(tb, b) >= min_iou for _, b in boxes):
            keep.append(i)
    return np.array(keep, dtype=np.int64)


def apply_box_regime(rec: SceneRecord, min_iou: float, dilation: int = 1) -> SceneRecord:
    """Restrict the pool to box-compatible proposals; errors if none remain."""
    if rec.annotation.boxes is None:
        raise ValueError("scene has no box annotations")
    keep = filter_by_boxes(rec.pool, rec.annotation.boxes, min_iou)
    if keep.size == 0:
        raise EmptyPoolError(f"scene {rec.scene_id}: box filter removed every proposal")
    return rebuild_with_pool(rec, keep, dilation=dilation)


def make_scene(scene_cfg: SceneConfig, prop_cfg: ProposalConfig, seed: int, scene_id: int) -> SceneRecord:
    return gen_proposals(gen_scene(scene_cfg, seed, scene_id), prop_cfg, seed)


def make_dataset(scene_cfg: SceneConfig, prop_cfg: ProposalConfig, n: int, seed: int, start_id: int = 0) -> list:
    return [make_scene(scene_cfg, prop_cfg, seed, start_id + i) for i in range(n)]
