"""Scene records: ground truth, annotations, proposal pools, persistence.

Datasets are JSON-lines files, one scene per line. Masks are RLE encoded;
image and edge rasters are base64 little-endian float32.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .adjacency import Adjacency, build_adjacency
from .masks import (
    Box,
    overlap_fraction_matrix,
    rle_decode,
    rle_encode,
    stack_pool,
    tight_box,
)

FORMAT_VERSION = 1


class DatasetFormatError(Exception):
    pass


@dataclass
class GroundTruthInstance:
    class_id: int
    mask: np.ndarray


@dataclass
class Seed:
    class_id: int
    mask: np.ndarray


@dataclass
class Annotation:
    """Weak supervision: class presence flags, optionally boxes.

    presence[j-1] is 1 iff class j appears (class ids are 1-based;
    0 is background). boxes is None in the image-level regime.
    """

    presence: np.ndarray
    boxes: list | None = None  # list of (class_id, Box)

    @property
    def classes(self) -> np.ndarray:
        return np.nonzero(self.presence)[0] + 1

    def without_boxes(self) -> "Annotation":
        return Annotation(presence=self.presence, boxes=None)


@dataclass
class PoolGeometry:
    """Pool-derived arrays reused by every inference call on a scene."""

    areas: np.ndarray
    ovl: np.ndarray  # ovl[i, l] = |i ∩ l| / |l|
    boxes: list  # tight boxes, one per proposal

    @staticmethod
    def from_pool(pool: np.ndarray) -> "PoolGeometry":
        return PoolGeometry(
            areas=pool.reshape(pool.shape[0], -1).sum(axis=1),
            ovl=overlap_fraction_matrix(pool),
            boxes=[tight_box(pool[i]) for i in range(pool.shape[0])],
        )


@dataclass
class SceneRecord:
    scene_id: int
    width: int
    height: int
    num_classes: int
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    edges: np.ndarray  # (H, W) float32
    gt: list  # of GroundTruthInstance
    annotation: Annotation
    seeds: list  # of Seed
    pool: np.ndarray  # (P, H, W) bool
    adjacency: Adjacency
    _geom: PoolGeometry | None = field(default=None, repr=False, compare=False)
    _features: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def num_proposals(self) -> int:
        return self.pool.shape[0]

    def geometry(self) -> PoolGeometry:
        if self._geom is None:
            self._geom = PoolGeometry.from_pool(self.pool)
        return self._geom


def _b64_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.asarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _unb64_f32(s: str, shape) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f4")
    return arr.reshape(shape).copy()


def scene_to_obj(rec: SceneRecord) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "scene_id": rec.scene_id,
        "width": rec.width,
        "height": rec.height,
        "num_classes": rec.num_classes,
        "image": _b64_f32(rec.image),
        "edges": _b64_f32(rec.edges),
        "gt": [{"class_id": g.class_id, "mask": rle_encode(g.mask)} for g in rec.gt],
        "annotation": {
            "presence": rec.annotation.presence.astype(int).tolist(),
            "boxes": None
            if rec.annotation.boxes is None
            else [[c, *b.as_tuple()] for c, b in rec.annotation.boxes],
        },
        "seeds": [{"class_id": s.class_id, "mask": rle_encode(s.mask)} for s in rec.seeds],
        "pool": [rle_encode(rec.pool[i]) for i in range(rec.pool.shape[0])],
        "adjacency": {
            "neighbors": [n.tolist() for n in rec.adjacency.neighbors],
            "weights": [w.tolist() for w in rec.adjacency.weights],
        },
    }


def scene_from_obj(obj: dict) -> SceneRecord:
    try:
        version = obj["format_version"]
        if version != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported format_version {version}")
        h, w = obj["height"], obj["width"]
        pool = stack_pool([rle_decode(r) for r in obj["pool"]])
        ann_obj = obj["annotation"]
        boxes = ann_obj["boxes"]
        annotation = Annotation(
            presence=np.array(ann_obj["presence"], dtype=np.int8),
            boxes=None if boxes is None else [(b[0], Box(*b[1:])) for b in boxes],
        )
        neighbors = [np.array(n, dtype=np.int64) for n in obj["adjacency"]["neighbors"]]
        weights = [np.array(x, dtype=np.float64) for x in obj["adjacency"]["weights"]]
        eu, ev, ew = [], [], []
        for u, (ns, ws) in enumerate(zip(neighbors, weights)):
            for v, wt in zip(ns, ws):
                if u < v:
                    eu.extend((u, v))
                    ev.extend((v, u))
                    ew.extend((wt, wt))
        return SceneRecord(
            scene_id=obj["scene_id"],
            width=w,
            height=h,
            num_classes=obj["num_classes"],
            image=_unb64_f32(obj["image"], (h, w, 3)),
            edges=_unb64_f32(obj["edges"], (h, w)),
            gt=[
                GroundTruthInstance(g["class_id"], rle_decode(g["mask"]))
                for g in obj["gt"]
            ],
            annotation=annotation,
            seeds=[Seed(s["class_id"], rle_decode(s["mask"])) for s in obj["seeds"]],
            pool=pool,
            adjacency=Adjacency(
                neighbors=neighbors,
                weights=weights,
                edge_u=np.array(eu, dtype=np.int64),
                edge_v=np.array(ev, dtype=np.int64),
                edge_w=np.array(ew, dtype=np.float64),
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DatasetFormatError):
            raise
        raise DatasetFormatError(f"malformed scene record: {exc}") from exc


def save_dataset(path, records) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for rec in records:
            fh.write(json.dumps(scene_to_obj(rec), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path) -> list:
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(
                    f"line {line_no + 1}: truncated or invalid JSON"
                ) from exc
            records.append(scene_from_obj(obj))
    return records


def rebuild_with_pool(rec: SceneRecord, keep: np.ndarray, dilation: int = 1) -> SceneRecord:
    """New record with pool restricted to `keep` indices; adjacency rebuilt."""
    pool = rec.pool[keep]
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
        adjacency=build_adjacency(pool, rec.edges, dilation=dilation),
    )
