import numpy as np
import pytest

from annoconsist.masks import Box
from annoconsist.scenes import (
    Annotation,
    DatasetFormatError,
    GroundTruthInstance,
    Seed,
    load_dataset,
    rebuild_with_pool,
    save_dataset,
    scene_from_obj,
    scene_to_obj,
)
from annoconsist.synthgen import ProposalConfig, SceneConfig, make_scene

from conftest import make_record, rect_mask


def _sample_record():
    rng = np.random.default_rng(9)
    masks = [rect_mask(16, 16, 2, 8, 2, 8), rect_mask(16, 16, 6, 12, 6, 12),
             rect_mask(16, 16, 10, 15, 1, 6)]
    edges = rng.random((16, 16)).astype(np.float32)
    image = rng.random((16, 16, 3)).astype(np.float32)
    gt = [GroundTruthInstance(1, masks[0]), GroundTruthInstance(2, masks[2])]
    seeds = [Seed(1, rect_mask(16, 16, 4, 6, 4, 6)),
             Seed(2, rect_mask(16, 16, 11, 13, 2, 4))]
    return make_record(masks, [1, 2], edges=edges, image=image, seeds=seeds,
                       gt=gt, boxes=[(1, Box(2, 2, 7, 7)), (2, Box(1, 10, 5, 14))],
                       scene_id=17)


def _assert_records_equal(a, b):
    assert a.scene_id == b.scene_id
    assert (a.width, a.height, a.num_classes) == (b.width, b.height, b.num_classes)
    np.testing.assert_allclose(a.image, b.image, atol=1e-7)
    np.testing.assert_allclose(a.edges, b.edges, atol=1e-7)
    np.testing.assert_array_equal(a.pool, b.pool)
    np.testing.assert_array_equal(a.annotation.presence, b.annotation.presence)
    if a.annotation.boxes is None:
        assert b.annotation.boxes is None
    else:
        assert [(c, box.as_tuple()) for c, box in a.annotation.boxes] == [
            (c, box.as_tuple()) for c, box in b.annotation.boxes]
    assert len(a.gt) == len(b.gt)
    for ga, gb in zip(a.gt, b.gt):
        assert ga.class_id == gb.class_id
        np.testing.assert_array_equal(ga.mask, gb.mask)
    assert len(a.seeds) == len(b.seeds)
    for sa, sb in zip(a.seeds, b.seeds):
        assert sa.class_id == sb.class_id
        np.testing.assert_array_equal(sa.mask, sb.mask)
    assert a.adjacency.num_edges == b.adjacency.num_edges
    for u in range(a.num_proposals):
        np.testing.assert_array_equal(a.adjacency.neighbors[u],
                                      b.adjacency.neighbors[u])
        np.testing.assert_allclose(a.adjacency.weights[u],
                                   b.adjacency.weights[u])


def test_obj_roundtrip_preserves_record():
    rec = _sample_record()
    _assert_records_equal(rec, scene_from_obj(scene_to_obj(rec)))


def test_generated_scene_roundtrips_through_file(tmp_path):
    rec = make_scene(SceneConfig(), ProposalConfig(), seed=4, scene_id=3)
    path = tmp_path / "one.jsonl"
    save_dataset(path, [rec])
    loaded = load_dataset(path)
    assert len(loaded) == 1
    _assert_records_equal(rec, loaded[0])


def test_save_load_many_preserves_order(tmp_path):
    recs = [make_scene(SceneConfig(), ProposalConfig(), seed=1, scene_id=i)
            for i in range(3)]
    path = tmp_path / "many.jsonl"
    save_dataset(path, recs)
    loaded = load_dataset(path)
    assert [r.scene_id for r in loaded] == [0, 1, 2]


def test_truncated_json_reports_line_number(tmp_path):
    rec = _sample_record()
    path = tmp_path / "broken.jsonl"
    save_dataset(path, [rec, rec])
    text = path.read_text()
    lines = text.splitlines()
    lines[1] = lines[1][: len(lines[1]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="line 2"):
        load_dataset(path)


def test_wrong_format_version_rejected():
    obj = scene_to_obj(_sample_record())
    obj["format_version"] = 99
    with pytest.raises(DatasetFormatError, match="format_version"):
        scene_from_obj(obj)


def test_missing_key_rejected():
    obj = scene_to_obj(_sample_record())
    del obj["pool"]
    with pytest.raises(DatasetFormatError, match="malformed"):
        scene_from_obj(obj)


def test_blank_lines_are_skipped(tmp_path):
    rec = _sample_record()
    path = tmp_path / "gaps.jsonl"
    save_dataset(path, [rec])
    path.write_text("\n" + path.read_text() + "\n\n")
    assert len(load_dataset(path)) == 1


def test_annotation_classes_and_without_boxes():
    ann = Annotation(presence=np.array([1, 0, 1], dtype=np.int8),
                     boxes=[(1, Box(0, 0, 3, 3))])
    np.testing.assert_array_equal(ann.classes, [1, 3])
    stripped = ann.without_boxes()
    assert stripped.boxes is None
    np.testing.assert_array_equal(stripped.presence, ann.presence)
    assert ann.boxes is not None  # original untouched


def test_rebuild_with_pool_restricts_and_rebuilds():
    rec = _sample_record()
    keep = np.array([0, 2])
    sub = rebuild_with_pool(rec, keep)
    assert sub.num_proposals == 2
    np.testing.assert_array_equal(sub.pool[0], rec.pool[0])
    np.testing.assert_array_equal(sub.pool[1], rec.pool[2])
    # masks 0 and 2 do not touch: no edges in the rebuilt graph
    assert sub.adjacency.num_edges == 0
    assert sub.scene_id == rec.scene_id
