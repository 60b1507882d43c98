import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coseg.harness import (PALETTE, EvalReport, HarnessError, Manifest, bundled_fixtures, evaluate_iou,
                           frame_iou, generate_fixture, match_objects, object_iou, overlay_frames,
                           read_masks, write_masks)
from coseg.pnm import read_pnm
from coseg.vidcore import Video

from conftest import rect_mask


def small_video(t=2, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return Video("v", rng.integers(0, 256, (t, h, w, 3), dtype=np.uint8))


def test_iou_examples():
    g = rect_mask((6, 8), 0, 2, 0, 4)
    r = rect_mask((6, 8), 0, 2, 2, 6)
    assert object_iou(np.stack([g]), {0: g}) == 1.0
    assert object_iou(np.zeros((1, 6, 8), bool), {0: g}) == 0.0
    assert object_iou(np.stack([r]), {0: g}) == 1 / 3
    assert frame_iou(r, g) == frame_iou(g, r)


def test_iou_skips_frames_empty_in_both():
    g = rect_mask((4, 4), 0, 2, 0, 2)
    z = np.zeros((4, 4), bool)
    pred = np.stack([g, z])
    assert object_iou(pred, {0: g, 1: z}) == 1.0
    assert object_iou(np.stack([g, g]), {0: g, 1: z}) == 0.5
    with pytest.raises(HarnessError):
        object_iou(pred, {})


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_iou_properties(seed):
    rng = np.random.default_rng(seed)
    r = rng.random((3, 5, 5)) < 0.4
    g = rng.random((3, 5, 5)) < 0.4
    gt = dict(enumerate(g))
    v = object_iou(r, gt)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(object_iou(g, dict(enumerate(r))))
    assert object_iou(g, gt) == 1.0
    if v == 1.0:
        assert np.array_equal(r, g)


def _label_image(masks):
    out = np.zeros(masks[0].shape, np.uint8)
    for k, m in enumerate(masks, 1):
        out[m] = k
    return out


def test_match_single():
    g = rect_mask((6, 6), 1, 4, 1, 4)
    assert match_objects(np.stack([g[None]]), {0: g.astype(np.uint8)}) == {0: 1}


def test_match_example_scores():
    # slot a overlaps label 1 strongly, slot b label 2
    gt = {0: _label_image([rect_mask((10, 10), 0, 10, 0, 5), rect_mask((10, 10), 0, 10, 5, 10)])}
    a = rect_mask((10, 10), 0, 10, 0, 5)
    b = rect_mask((10, 10), 0, 10, 4, 10)
    pred = np.stack([a[None], b[None]])
    assert match_objects(pred, gt) == {0: 1, 1: 2}


def _total(pred, gt, mapping):
    return sum(object_iou(pred[k], {t: img == lbl for t, img in gt.items()})
               for k, lbl in mapping.items() if lbl is not None)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 5), st.integers(1, 5))
def test_match_is_optimal_and_order_free(seed, n_slots, n_labels):
    rng = np.random.default_rng(seed)
    gt = {t: rng.integers(0, n_labels + 1, (6, 6)).astype(np.uint8) for t in range(2)}
    for k in range(1, n_labels + 1):
        gt[0][k - 1, 0] = k  # every label present
    pred = rng.random((n_slots, 2, 6, 6)) < 0.3
    labels = list(range(1, n_labels + 1))
    m = match_objects(pred, gt, labels)
    best = 0.0
    for perm in itertools.permutations(labels + [None] * n_slots, n_slots):
        best = max(best, _total(pred, gt, dict(enumerate(perm))))
    assert _total(pred, gt, m) == pytest.approx(best, abs=1e-12)
    order = rng.permutation(n_slots)
    m2 = match_objects(pred[order], gt, labels)
    assert _total(pred[order], gt, m2) == pytest.approx(_total(pred, gt, m), abs=1e-12)
    assigned = [v for v in m.values() if v is not None]
    assert len(assigned) == len(set(assigned)) == min(n_slots, n_labels)


def test_evaluate_iou_and_report_round_trip(tmp_path):
    v = small_video(2, 10, 10)
    g1 = rect_mask((10, 10), 0, 5, 0, 5)
    g2 = rect_mask((10, 10), 5, 10, 5, 10)
    gt = {t: _label_image([g1, g2]) for t in range(2)}
    pred = np.stack([np.stack([g2, g2]), np.stack([g1, g1])])
    rep = evaluate_iou({"v": pred}, [v], [gt], "set", {"seed": 42}, {"flow": 0.5})
    assert rep.per_video == {"v": {"1": 1.0, "2": 1.0}}
    assert rep.mapping == {"v": {"0": 2, "1": 1}}
    assert rep.mean_iou == 1.0
    rep.save(tmp_path / "r.json")
    assert EvalReport.load(tmp_path / "r.json") == rep
    assert "mean" in rep.format()


def test_unmatched_label_scores_zero():
    v = small_video(2, 10, 10)
    g1 = rect_mask((10, 10), 0, 5, 0, 5)
    g2 = rect_mask((10, 10), 5, 10, 5, 10)
    gt = {0: _label_image([g1, g2])}
    rep = evaluate_iou({"v": np.stack([np.stack([g1, g1])])}, [v], [gt])
    assert rep.per_video["v"] == {"1": 1.0, "2": 0.0}
    assert rep.mean_iou == 0.5


def test_overlay_examples():
    v = small_video()
    empty = overlay_frames(v, np.zeros((1, 2, 8, 8), bool))
    assert np.array_equal(empty, v.frames)
    full = overlay_frames(v, np.ones((1, 2, 8, 8), bool))
    expect = np.clip(np.rint(0.6 * v.frames + 0.4 * PALETTE[0]), 0, 255).astype(np.uint8)
    assert np.array_equal(full, expect)
    solid = Video("s", np.zeros((2, 8, 8, 3), np.uint8))
    tinted = overlay_frames(solid, np.ones((1, 2, 8, 8), bool))
    assert (tinted == np.rint(0.4 * PALETTE[0]).astype(np.uint8)).all()


def test_mask_files_round_trip(tmp_path):
    v = small_video(3)
    rng = np.random.default_rng(1)
    masks = rng.random((2, 3, 8, 8)) < 0.5
    write_masks(tmp_path, v.id, masks)
    assert sorted(p.name for p in (tmp_path / "v").iterdir()) == ["1", "2"]
    assert set(np.unique(read_pnm(tmp_path / "v" / "1" / "000.pgm"))) <= {0, 255}
    assert np.array_equal(read_masks(tmp_path, v), masks)


def test_manifest_errors(tmp_path):
    with pytest.raises(HarnessError, match="missing.txt"):
        Manifest.load(tmp_path / "missing.txt")
    (tmp_path / "m.txt").write_text("objects=1\nvideo.1.frames=nowhere\n")
    with pytest.raises(HarnessError, match="nowhere"):
        Manifest.load(tmp_path / "m.txt")
    (tmp_path / "e.txt").write_text("objects=1\n")
    with pytest.raises(HarnessError, match="no videos"):
        Manifest.load(tmp_path / "e.txt")


def test_bundled_fixtures(tmp_path):
    assert set(bundled_fixtures()) >= {"two-videos-one-square", "occlusion", "two-objects"}
    m = Manifest.load(generate_fixture("two-videos-one-square", tmp_path / "a"))
    assert m.objects == 1 and len(m.videos) == 2
    for e in m.videos:
        assert e.frames.is_dir() and e.gt.is_dir()
    m = Manifest.load(generate_fixture("occlusion", tmp_path / "b"))
    vids = m.load_videos()
    gts = m.load_ground_truth(vids)
    assert [int(gts[0][t].any()) for t in range(10)] == [1, 1, 1, 1, 0, 0, 0, 1, 1, 1]
    m = Manifest.load(generate_fixture("two-objects", tmp_path / "c"))
    assert m.objects == 2
    assert "objects=2" in (tmp_path / "c" / "manifest.txt").read_text()


def test_unknown_fixture(tmp_path):
    with pytest.raises(HarnessError, match="not found"):
        generate_fixture("no-such-fixture", tmp_path)
