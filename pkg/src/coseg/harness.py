"""Video-set manifests, IoU evaluation, object matching, reports and overlays."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import parse_config
from .pnm import read_pnm, write_pgm, write_ppm
from .vidcore import load_ground_truth, load_video

PALETTE = np.array([(255, 0, 0), (0, 200, 0), (0, 80, 255), (255, 200, 0),
                    (255, 0, 255), (0, 220, 220), (255, 128, 0), (128, 0, 255)], dtype=np.float64)


class HarnessError(ValueError):
    pass


@dataclass
class VideoEntry:
    id: str
    frames: Path
    gt: Path | None = None


@dataclass
class Manifest:
    name: str
    objects: int
    videos: list
    path: Path | None = None

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise HarnessError(f"manifest not found: {path}")
        kv = parse_config(path.read_text())
        base = path.parent
        try:
            objects = int(kv.get("objects", "1"))
        except ValueError as exc:
            raise HarnessError(f"{path}: objects must be an integer") from exc
        if objects < 1:
            raise HarnessError(f"{path}: objects must be at least 1")
        found = {}
        for key, value in kv.items():
            parts = key.split(".")
            if parts[0] != "video":
                continue
            if len(parts) != 3 or parts[2] not in ("frames", "gt", "id"):
                raise HarnessError(f"{path}: unknown key {key!r}")
            found.setdefault(int(parts[1]), {})[parts[2]] = value
        if not found:
            raise HarnessError(f"{path}: no videos listed")
        videos = []
        for i in sorted(found):
            d = found[i]
            if "frames" not in d:
                raise HarnessError(f"{path}: video.{i}.frames missing")
            frames = (base / d["frames"]).resolve()
            if not frames.is_dir():
                raise HarnessError(f"frame directory not found: {frames}")
            gt = (base / d["gt"]).resolve() if "gt" in d else None
            if gt is not None and not gt.is_dir():
                raise HarnessError(f"ground-truth directory not found: {gt}")
            videos.append(VideoEntry(d.get("id", f"video{i}"), frames, gt))
        ids = [v.id for v in videos]
        if len(set(ids)) != len(ids):
            raise HarnessError(f"{path}: duplicate video ids")
        return cls(kv.get("name", path.stem), objects, videos, path)

    def write(self, path):
        path = Path(path)
        lines = [f"name={self.name}", f"objects={self.objects}"]
        for i, v in enumerate(self.videos, 1):
            lines.append(f"video.{i}.id={v.id}")
            lines.append(f"video.{i}.frames={_rel(v.frames, path.parent)}")
            if v.gt is not None:
                lines.append(f"video.{i}.gt={_rel(v.gt, path.parent)}")
        path.write_text("\n".join(lines) + "\n")

    def load_videos(self):
        return [load_video(v.frames, v.id) for v in self.videos]

    def load_ground_truth(self, videos):
        return [load_ground_truth(e.gt, v.n_frames) if e.gt is not None else {}
                for e, v in zip(self.videos, videos)]


def _rel(p, base):
    try:
        return str(Path(p).resolve().relative_to(Path(base).resolve()))
    except ValueError:
        return str(p)


# ---------------------------------------------------------------- metrics

def frame_iou(r, g):
    """IoU of one frame; ``None`` when both masks are empty."""
    union = np.count_nonzero(r | g)
    if union == 0:
        return None
    return np.count_nonzero(r & g) / union


def object_iou(pred, gt_masks):
    """Mean per-frame IoU over the frames that carry ground truth.

    ``pred`` is ``(T, H, W)``; ``gt_masks`` maps frame index to a boolean
    mask.  Frames empty in both are skipped, frames empty in exactly one
    count as 0.
    """
    if not gt_masks:
        raise HarnessError("no ground-truth frames")
    vals = [frame_iou(pred[t], g) for t, g in sorted(gt_masks.items())]
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else 1.0


def gt_labels(gt):
    labels = set()
    for img in gt.values():
        labels.update(int(v) for v in np.unique(img) if v != 0)
    return sorted(labels)


def match_objects(pred, gt, labels=None):
    """Slot -> GT label mapping maximising total IoU (unmatched slots map to ``None``)."""
    labels = gt_labels(gt) if labels is None else list(labels)
    n_slots = len(pred)
    if not labels or not n_slots:
        return {k: None for k in range(n_slots)}
    score = np.zeros((n_slots, len(labels)))
    for k in range(n_slots):
        for j, lbl in enumerate(labels):
            score[k, j] = object_iou(pred[k], {t: img == lbl for t, img in gt.items()})
    rows, cols = linear_sum_assignment(score, maximize=True)
    mapping = {k: None for k in range(n_slots)}
    for r, c in zip(rows, cols):
        mapping[int(r)] = labels[c]
    return mapping


@dataclass
class EvalReport:
    set_name: str
    per_video: dict  # video -> {str(label): IoU}
    mapping: dict  # video -> {str(slot): label or None}
    mean_iou: float
    config: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=lambda: {"iou_aggregation": "per-frame mean over GT frames"})

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def format(self):
        rows = [("video", "object", "IoU")]
        for vid in sorted(self.per_video):
            for lbl, iou in sorted(self.per_video[vid].items(), key=lambda kv: int(kv[0])):
                rows.append((vid, lbl, f"{iou:.4f}"))
        rows.append(("mean", "", f"{self.mean_iou:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def evaluate_iou(result, videos, gts, set_name="", config=None, timing=None):
    """Per-video, per-object IoU after optimal slot-to-label matching.

    ``result`` maps video id to a ``(C, T, H, W)`` mask array.  A GT label
    without a matched slot scores 0.
    """
    per_video, mapping, all_ious = {}, {}, []
    for v, gt in zip(videos, gts):
        if not gt:
            continue
        pred = result[v.id]
        labels = gt_labels(gt)
        m = match_objects(pred, gt, labels)
        inv = {lbl: k for k, lbl in m.items() if lbl is not None}
        scores = {}
        for lbl in labels:
            g = {t: img == lbl for t, img in gt.items()}
            scores[str(lbl)] = object_iou(pred[inv[lbl]], g) if lbl in inv else 0.0
        per_video[v.id] = scores
        mapping[v.id] = {str(k): lbl for k, lbl in m.items()}
        all_ious.extend(scores.values())
    if not all_ious:
        raise HarnessError("no ground-truth frames in any video")
    return EvalReport(set_name, per_video, mapping, float(np.mean(all_ious)),
                      dict(config or {}), dict(timing or {}))


# ---------------------------------------------------------------- outputs

def overlay_frames(video, masks):
    """``0.6 * frame + 0.4 * colour`` on every object's pixels."""
    out = video.frames.astype(np.float64)
    for k in range(len(masks)):
        color = PALETTE[k % len(PALETTE)]
        m = masks[k]
        out[m] = 0.6 * out[m] + 0.4 * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_overlay(video, masks, directory, digits=3):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = overlay_frames(video, masks)
    for t, img in enumerate(frames):
        write_ppm(directory / f"{t:0{digits}d}.ppm", img)
    return frames


def write_masks(directory, video_id, masks, digits=3):
    """``<dir>/<video>/<slot>/<idx>.pgm`` with 0/255 pixels; slots numbered from 1."""
    for k in range(len(masks)):
        d = Path(directory) / video_id / str(k + 1)
        d.mkdir(parents=True, exist_ok=True)
        for t, m in enumerate(masks[k]):
            write_pgm(d / f"{t:0{digits}d}.pgm", m.astype(np.uint8) * 255)


def read_masks(directory, video):
    d = Path(directory) / video.id
    if not d.is_dir():
        raise HarnessError(f"mask directory not found: {d}")
    slots = sorted((p for p in d.iterdir() if p.is_dir() and p.name.isdigit()), key=lambda p: int(p.name))
    out = np.zeros((len(slots), video.n_frames, video.height, video.width), dtype=bool)
    for k, sd in enumerate(slots):
        for f in sd.glob("*.pgm"):
            out[k, int(f.stem)] = read_pnm(f) > 0
    return out


# ---------------------------------------------------------------- fixtures

def bundled_fixtures():
    from importlib import resources
    root = resources.files("coseg") / "fixtures"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def fixture_spec_path(name_or_path):
    """A bundled fixture name or a path to a synthetic-set JSON spec."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    from importlib import resources
    cand = resources.files("coseg") / "fixtures" / f"{name_or_path}.json"
    if cand.is_file():
        return Path(str(cand))
    raise HarnessError(f"fixture spec not found: {name_or_path} "
                       f"(bundled: {', '.join(bundled_fixtures())})")


def generate_fixture(spec, out_dir):
    """Render a synthetic set: frames, GT, ``manifest.txt`` and ``config.txt``.

    Returns the manifest path.
    """
    from .vidcore import SyntheticSpec, generate_synthetic_set, save_ground_truth, save_video
    if not isinstance(spec, SyntheticSpec):
        spec = SyntheticSpec.load(fixture_spec_path(spec))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    videos, gts = generate_synthetic_set(spec)
    entries = []
    for v, g in zip(videos, gts):
        save_video(v, out / v.id / "frames")
        save_ground_truth(g, out / v.id / "gt")
        entries.append(VideoEntry(v.id, out / v.id / "frames", out / v.id / "gt"))
    manifest = Manifest(spec.name, len(spec.objects), entries)
    manifest.write(out / "manifest.txt")
    lines = [f"{k}={v}" for k, v in spec.config.items()]
    (out / "config.txt").write_text("".join(line + "\n" for line in lines))
    return out / "manifest.txt"
