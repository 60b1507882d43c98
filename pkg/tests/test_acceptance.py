"""End-to-end and property checks; each test prints one PASS/FAIL line."""
import itertools
import json
import math
import time

import numpy as np

from coseg.crf import build_crf, load_model, random_model, solve_brute_force, solve_trws
from coseg.features import (RegionFeature, chi_squared, color_histogram, feature_distance, flow_histogram,
                            shape_histogram)
from coseg.harness import frame_iou, read_masks
from coseg.proposals import Proposal, motion_score
from coseg.refine import FlowNetwork, max_flow
from coseg.streams import Stream, StreamSet, overlap_ratio

from conftest import rect_mask, verdict


def _tree_model(rng):
    n_videos, slots = [(1, 1), (2, 1), (1, 2), (3, 1), (2, 2), (4, 1), (5, 1), (3, 2), (2, 3), (6, 1)][
        rng.integers(10)]
    sizes = list(rng.integers(1, 7, n_videos * slots))
    return random_model(rng, n_videos, slots, sizes, "tree")


def _criterion_models():
    trees = [_tree_model(np.random.default_rng(s)) for s in range(100)]
    loopy = [random_model(np.random.default_rng(1000 + s), 2, 2, 5, "full") for s in range(100)]
    return trees, loopy


def test_inference_matches_exhaustive_search():
    start = time.perf_counter()
    trees, loopy = _criterion_models()
    worst = 0.0
    for m in trees:
        lab, _ = solve_trws(m)
        worst = max(worst, abs(lab.energy - solve_brute_force(m).energy))
    close = 0
    for m in loopy:
        lab, _ = solve_trws(m)
        best = solve_brute_force(m).energy
        close += lab.energy <= best + 0.05 * abs(best)
    secs = time.perf_counter() - start
    ok = worst <= 1e-9 and close >= 95 and secs < 30
    verdict(1, "TRW-S vs exhaustive search", ok,
            f"tree max gap {worst:.2e}, loopy within 5% {close}/100, {secs:.1f}s")


def test_lower_bound_monotone():
    trees, loopy = _criterion_models()
    bad = []
    for i, m in enumerate(trees + loopy):
        res = solve_trws(m, detail=True)
        b = np.asarray(res.bounds)
        # non-decreasing up to float round-off in the message sums
        if np.any(np.diff(b) < -1e-9) or b.max() > res.labeling.energy + 1e-6:
            bad.append(i)
    verdict(2, "lower bound monotone and below energy", not bad, f"{200 - len(bad)}/200 models")


def _min_cut_exhaustive(n, s, t, tails, heads, caps):
    others = [v for v in range(n) if v not in (s, t)]
    k = len(others)
    bits = np.array(list(itertools.product((False, True), repeat=k)), bool).reshape(2 ** k, k)
    side = np.zeros((len(bits), n), bool)
    side[:, s] = True
    side[:, others] = bits
    crossing = side[:, tails] & ~side[:, heads]
    return int((crossing * caps).sum(axis=1).min())


def test_max_flow_matches_cut_enumeration():
    rng = np.random.default_rng(7)
    nets = []
    for _ in range(200):
        n = int(rng.integers(2, 13))
        m = int(rng.integers(0, 4 * n))
        tails, heads = rng.integers(0, n, m), rng.integers(0, n, m)
        keep = tails != heads
        nets.append((n, tails[keep], heads[keep], rng.integers(0, 21, int(keep.sum()))))
    start = time.perf_counter()
    values = [max_flow(FlowNetwork.from_arcs(n, 0, n - 1, zip(t.tolist(), h.tolist(), c.tolist())))[0]
              for n, t, h, c in nets]
    secs = time.perf_counter() - start
    wrong = sum(v != _min_cut_exhaustive(n, 0, n - 1, t, h, c) for v, (n, t, h, c) in zip(values, nets))
    verdict(3, "max-flow equals minimum cut", wrong == 0 and secs < 10,
            f"{200 - wrong}/200 exact, {secs:.2f}s")


def _two_part(x):
    return np.array([x, 1.0 - x])


def test_formula_unit_checks():
    fails = []
    if abs(motion_score(0.37, 0.37) - (1 - math.exp(-1))) > 1e-12:
        fails.append("motion score")
    a = rect_mask((10, 10), 0, 2, 0, 4)
    b = rect_mask((10, 10), 0, 2, 2, 6)
    if overlap_ratio(a, b) != 1 / 3:
        fails.append("overlap")
    mask = rect_mask((8, 8), 2, 5, 2, 5)
    f = RegionFeature(_two_part(0.5), _two_part(0.5))
    sets = []
    for vid in ("v1", "v2"):
        streams = [Stream(vid, {t: Proposal(vid, t, mask, frozenset(), c, 0.0, c, 0, "generated", f)
                                for t in range(2)}, 2) for c in (3.0, 1.5)]
        sets.append(StreamSet(vid, streams))
    m = build_crf(sets, [np.zeros((2, 8, 8))] * 2, [1, 1])
    if abs(m.unary[0][0]) > 1e-12 or abs(m.unary[0][1] - math.log(2)) > 1e-12:
        fails.append("unary")
    x = 0.7 / 1.3  # chi2([1, 0], [x, 1 - x]) = (1 - x) / (1 + x) = 0.3
    f1 = RegionFeature(_two_part(1.0), _two_part(0.25))
    f2 = RegionFeature(_two_part(x), _two_part(0.25))
    if abs(feature_distance(f1, f2, 2.0) - 0.2) > 1e-12:
        fails.append("feature distance")
    verdict(4, "formula unit checks", not fails, ", ".join(fails) or "4/4")


def test_histogram_invariants():
    rng = np.random.default_rng(3)
    cases = 10_000
    fails = 0
    prev = None
    for _ in range(cases):
        h, w = rng.integers(6, 20, 2)
        frame = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
        mask = rng.random((h, w)) < rng.uniform(0.05, 1.0)
        mask[rng.integers(h), rng.integers(w)] = True
        flow = rng.normal(0, 3, (h, w, 2))
        hists = (color_histogram(frame, mask), shape_histogram(frame, mask), flow_histogram(flow, mask))
        ok = all(abs(x.sum() - 1.0) <= 1e-9 and (x >= 0).all() for x in hists)
        for x in hists:
            ok &= chi_squared(x, x) == 0.0
        if prev is not None:
            for x, y in zip(hists, prev):
                d, e = chi_squared(x, y), chi_squared(y, x)
                ok &= d == e and 0.0 <= d <= 1.0 + 1e-12 and (d > 0) == (not np.array_equal(x, y))
        fails += not ok
        prev = hists
    verdict(5, "histogram invariants", fails == 0, f"{cases - fails}/{cases} cases")


FIXTURES = ("two-videos-one-square", "occlusion", "two-objects")


def test_expansion_and_stream_structure(fixture_runs):
    problems = []
    for name in FIXTURES:
        run = fixture_runs(name)
        for v in run.videos:
            _, original, expanded, raw, merged = run.dumps(v)
            for t, (o, e) in enumerate(zip(original, expanded)):
                same = len(e) >= len(o) and all(
                    np.array_equal(p.mask, q.mask) and p.combined == q.combined for p, q in zip(o, e))
                if not same:
                    problems.append(f"{name}/{v.id} frame {t} expansion")
            for s in raw:
                if s.frames != list(range(s.frames[0], s.frames[-1] + 1)):
                    problems.append(f"{name}/{v.id} raw stream gap")
            if any(len(s) == 1 for s in merged):
                problems.append(f"{name}/{v.id} single-frame merged stream")
    verdict(6, "expansion prefix and stream structure", not problems, "; ".join(problems) or "3 fixtures")


def _per_video(report):
    return {v: ious["1"] for v, ious in report.per_video.items()}


def test_single_object_end_to_end(fixture_runs):
    run = fixture_runs("two-videos-one-square")
    ious = _per_video(run.report)
    ok = len(ious) == 2 and min(ious.values()) >= 0.70 and run.seconds < 60
    verdict(7, "single object IoU", ok,
            ", ".join(f"{v} {x:.3f}" for v, x in sorted(ious.items())) + f", {run.seconds:.1f}s")


def test_multi_object_end_to_end(fixture_runs):
    run = fixture_runs("two-objects")
    rep = run.report
    bijective = all(sorted(m.values()) == [1, 2] for m in rep.mapping.values())
    ok = rep.mean_iou >= 0.60 and bijective and run.seconds < 120
    verdict(8, "multi-object IoU and mapping", ok,
            f"mean {rep.mean_iou:.3f}, bijective {bijective}, {run.seconds:.1f}s")


def test_occlusion_merge(fixture_runs):
    run = fixture_runs("occlusion")
    model = load_model(run.out / "stages" / "crf.model")
    states = json.loads((run.out / "stages" / "labeling.json").read_text())["states"]
    gapped = []
    for v in run.videos:
        merged = run.dumps(v)[4]
        chosen = [merged.streams[s] for (vid, _), s in zip(model.nodes, states) if vid == v.id]
        gapped += [c.frames for c in chosen if c.frames != list(range(c.frames[0], c.frames[-1] + 1))]
    v, gt = run.videos[0], run.gts[0]
    pred = read_masks(run.out / "masks", v)[0]
    visible = [t for t in range(v.n_frames) if (gt[t] == 1).any()]
    seen = float(np.mean([frame_iou(pred[t], gt[t] == 1) for t in visible]))
    reported = run.report.per_video[v.id]["1"]
    ok = bool(gapped) and seen >= 0.60 and reported >= 0.60
    verdict(9, "occlusion fragments merged", ok,
            f"selected gapped {gapped}, visible-frame IoU {seen:.3f}, reported {reported:.3f}")


def test_determinism(square_rerun):
    first, out, code = square_rerun
    files = sorted(p.relative_to(first.out / "masks") for p in (first.out / "masks").rglob("*.pgm"))
    again = sorted(p.relative_to(out / "masks") for p in (out / "masks").rglob("*.pgm"))
    same = code == 0 and files == again and files and all(
        (first.out / "masks" / p).read_bytes() == (out / "masks" / p).read_bytes() for p in files)
    verdict(10, "byte-identical masks on rerun", bool(same), f"{len(files)} mask files")
