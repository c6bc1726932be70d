import numpy as np
import pytest

from annoconsist import kernels
from annoconsist.adjacency import build_adjacency
from annoconsist.masks import stack_pool
from annoconsist.scenes import Annotation, SceneRecord


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the jitted kernels once so no individual test pays for it
    kernels.warmup()


def make_record(masks, present_classes, num_classes=3, size=None, edges=None,
                boxes=None, scene_id=0, image=None, seeds=None, gt=None):
    """Hand-built scene record for controlled inference/loss tests.

    masks: list of (H, W) bool arrays forming the pool.
    present_classes: iterable of annotated class ids.
    """
    pool = stack_pool(masks)
    h, w = pool.shape[1:] if pool.size else (size or (16, 16))
    if size is not None:
        h, w = size
    presence = np.zeros(num_classes, dtype=np.int8)
    for j in present_classes:
        presence[j - 1] = 1
    if edges is None:
        edges = np.zeros((h, w), dtype=np.float32)
    if image is None:
        image = np.full((h, w, 3), 0.5, dtype=np.float32)
    return SceneRecord(
        scene_id=scene_id,
        width=w,
        height=h,
        num_classes=num_classes,
        image=image,
        edges=edges,
        gt=gt or [],
        annotation=Annotation(presence=presence, boxes=boxes),
        seeds=seeds or [],
        pool=pool,
        adjacency=build_adjacency(pool, edges),
    )


def rect_mask(h, w, y0, y1, x0, x1):
    """Filled rectangle with inclusive corner (y0, x0), exclusive (y1, x1)."""
    m = np.zeros((h, w), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m
