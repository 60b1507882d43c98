import time

import numpy as np
import pytest

from coseg.config import PipelineConfig
from coseg.harness import Manifest, generate_fixture
from coseg.pipeline import Pipeline, run_pipeline
from coseg.proposals import read_proposals
from coseg.streams import read_streams
from coseg.tcs import SuperpixelMap
from coseg.vidcore import SyntheticSpec, generate_synthetic_set

RED = (220, 40, 40)
GREEN = (40, 190, 60)


def synth_set(placements, frames=10, width=64, height=48, objects=None, background=None):
    """Render a synthetic set: one placement list per video.

    Each placement is ``(label, start, velocity[, hidden])``.
    """
    objects = objects or [{"label": 1, "shape": "rectangle", "size": [16, 16], "color": list(RED)}]
    bg = background or {"kind": "flat", "color": [128, 128, 128]}
    videos = []
    for i, pl in enumerate(placements):
        objs = []
        for p in pl:
            d = {"label": p[0], "start": list(p[1]), "velocity": list(p[2])}
            if len(p) > 3:
                d["hidden"] = list(p[3])
            objs.append(d)
        videos.append({"id": f"v{i + 1}", "background": bg, "objects": objs})
    spec = SyntheticSpec.from_dict({"name": "t", "frames": frames, "width": width, "height": height,
                                    "objects": objects, "videos": videos})
    return generate_synthetic_set(spec)


def square_video(frames=2, shift=(0, 0), size=16, start=(10, 10), background=None):
    videos, gts = synth_set([[(1, start, shift)]], frames=frames, background=background,
                            objects=[{"label": 1, "shape": "rectangle", "size": [size, size],
                                      "color": list(RED)}])
    return videos[0], gts[0]


def textured_frame(h=48, w=64, seed=0):
    rng = np.random.default_rng(seed)
    from scipy import ndimage
    img = ndimage.gaussian_filter(rng.random((h, w, 3)) * 255, sigma=(2, 2, 0))
    img = (img - img.min()) / (img.max() - img.min()) * 255
    return img.astype(np.uint8)


def rect_mask(shape, y0, y1, x0, x1):
    m = np.zeros(shape, dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


SMALL = PipelineConfig(tcs_count=100, max_proposals_per_frame=60)


class Front:
    """Flow, superpixels, scored and expanded proposals for one video."""

    def __init__(self, video, cfg=SMALL):
        self.pipe = pipe = Pipeline(cfg, threads=1)
        self.video = video
        self.forward, self.flows = pipe.flow(video)
        self.spm = pipe.tcs(video, self.forward)
        self.scored, self.mean_chi2 = pipe.proposals(video, self.spm, self.flows)
        self.warp = pipe.warp_cache(video, self.spm)
        self.expanded = pipe.expand(video, self.spm, self.flows, self.scored, self.mean_chi2, self.warp)


class FixtureRun:
    def __init__(self, name, root):
        self.name = name
        self.dir = root / name
        self.manifest = generate_fixture(name, self.dir)
        self.cfg = PipelineConfig.load(self.dir / "config.txt")
        self.out = root / f"out-{name}"
        start = time.perf_counter()
        self.masks, self.report = run_pipeline(self.manifest, self.cfg, self.out, dump_stages=True)
        self.seconds = time.perf_counter() - start
        m = Manifest.load(self.manifest)
        self.videos = m.load_videos()
        self.gts = m.load_ground_truth(self.videos)

    def dumps(self, video):
        """Reload one video's dumped superpixels, proposals and streams."""
        d = self.out / "stages" / video.id
        spm = SuperpixelMap.load(d / "tcs")
        original = read_proposals(d / "proposals", video, spm)
        expanded = read_proposals(d / "expanded", video, spm)
        raw = read_streams(d / "streams_raw", expanded, video.id)
        merged = read_streams(d / "streams", expanded, video.id)
        return spm, original, expanded, raw, merged


@pytest.fixture(scope="session")
def fixture_runs(tmp_path_factory):
    """Full pipeline runs on the bundled fixtures, computed once per session."""
    root = tmp_path_factory.mktemp("fixtures")
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = FixtureRun(name, root)
        return cache[name]
    return get



@pytest.fixture(scope="session")
def square_rerun(fixture_runs, tmp_path_factory):
    """Second run of the single-square fixture through the command line."""
    from coseg.cli import main
    first = fixture_runs("two-videos-one-square")
    out = tmp_path_factory.mktemp("rerun")
    code = main(["run", "--manifest", str(first.manifest), "--config", str(first.dir / "config.txt"),
                 "--out", str(out), "--quiet"])
    return first, out, code


VERDICTS = []


def verdict(n, title, ok, detail=""):
    """Record and print one acceptance line, then fail the test if needed."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}" + (f" ({detail})" if detail else "")
    VERDICTS.append((n, line))
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
