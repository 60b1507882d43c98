"""Video representation, frame I/O, dense optical flow and synthetic video sets.

Frames are ``(H, W, 3)`` uint8 arrays, masks are ``(H, W)`` bool arrays and
flow fields are ``(H, W, 2)`` float arrays holding ``(dx, dy)`` per pixel.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .pnm import PnmError, read_pnm, write_pgm, write_ppm

MIN_SIDE = 8


class VideoError(ValueError):
    """Raised for malformed videos, frame directories or synthetic specs."""


@dataclass(frozen=True)
class Video:
    id: str
    frames: np.ndarray  # (T, H, W, 3) uint8

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise VideoError(f"video {self.id!r}: frames must be (T, H, W, 3)")
        if frames.shape[0] < 2:
            raise VideoError(f"video {self.id!r}: fewer than 2 frames")
        if frames.shape[1] < MIN_SIDE or frames.shape[2] < MIN_SIDE:
            raise VideoError(f"video {self.id!r}: frames smaller than {MIN_SIDE}x{MIN_SIDE}")
        frames = np.ascontiguousarray(frames, dtype=np.uint8)
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def shape(self):
        return self.frames.shape[1:3]


# -- colour ------------------------------------------------------------------

_RGB2XYZ = np.array(
    [[0.412453, 0.357580, 0.180423],
     [0.212671, 0.715160, 0.072169],
     [0.019334, 0.119193, 0.950227]]
)
_WHITE = np.array([0.950456, 1.0, 1.088754])


def rgb_to_lab(rgb):
    """Convert uint8 sRGB (..., 3) to CIE Lab (D65) as float64."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE
    eps = (6 / 29) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6 / 29) ** 2) + 4 / 29)
    lab = np.empty_like(f)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    return lab


# -- frame I/O ---------------------------------------------------------------

_FRAME_NAME = re.compile(r"^(\d+)\.(ppm|png)$", re.IGNORECASE)


def _read_image(path):
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover - depends on environment
            raise VideoError(f"{path}: PNG input needs Pillow; convert frames to PPM") from exc
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    try:
        img = read_pnm(path)
    except (OSError, PnmError) as exc:
        raise VideoError(f"unreadable image {path}: {exc}") from exc
    if img.ndim != 3:
        raise VideoError(f"{path}: expected an RGB (P6) frame")
    return img.astype(np.uint8)


def load_video(directory, video_id=None):
    """Load ``<index>.ppm`` frames (zero-padded indices) from ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise VideoError(f"missing frame directory {directory}")
    entries = []
    for p in directory.iterdir():
        m = _FRAME_NAME.match(p.name)
        if m:
            entries.append((int(m.group(1)), p))
    entries.sort()
    if len(entries) < 2:
        raise VideoError(f"{directory}: fewer than 2 frames")
    frames = [_read_image(p) for _, p in entries]
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise VideoError(f"{directory}: dimension mismatch across frames {sorted(shapes)}")
    return Video(video_id or directory.name, np.stack(frames))


def save_video(video, directory, digits=3):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(video.frames):
        write_ppm(directory / f"{t:0{digits}d}.ppm", frame)


def load_ground_truth(directory, n_frames=None):
    """Read ``<index>_gt.pgm`` label images; returns ``{frame_index: labels}``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise VideoError(f"missing ground-truth directory {directory}")
    gt = {}
    for p in sorted(directory.glob("*_gt.pgm")):
        idx = int(p.name.split("_")[0])
        if n_frames is not None and idx >= n_frames:
            continue
        try:
            gt[idx] = read_pnm(p).astype(np.uint8)
        except (OSError, PnmError) as exc:
            raise VideoError(f"unreadable ground truth {p}: {exc}") from exc
    return gt


def save_ground_truth(labels, directory, digits=3):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, lab in enumerate(labels):
        write_pgm(directory / f"{t:0{digits}d}_gt.pgm", lab.astype(np.uint8))


# -- optical flow ------------------------------------------------------------

_HS_KERNEL = np.array([[1, 2, 1], [2, 0, 2], [1, 2, 1]], dtype=np.float64) / 12.0


def _downsample(img):
    return ndimage.gaussian_filter(img, sigma=(1.0, 1.0, 0))[::2, ::2]


def _sample(img, yy, xx):
    """Bilinear lookup of every channel of ``img`` at float coordinates."""
    out = np.empty(yy.shape + img.shape[2:])
    for c in range(img.shape[2]):
        out[..., c] = ndimage.map_coordinates(img[..., c], [yy, xx], order=1, mode="nearest")
    return out


def _upsample_flow(flow, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return 2.0 * _sample(flow, yy / 2.0, xx / 2.0)


def _hs_level(a, b, flow, iters, alpha2):
    h, w = a.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bw = _sample(b, yy + flow[..., 1], xx + flow[..., 0])
    mid = 0.5 * (a + bw)
    gy, gx = np.gradient(mid, axis=(0, 1))
    gt = bw - a
    j11 = (gx * gx).sum(-1)
    j12 = (gx * gy).sum(-1)
    j22 = (gy * gy).sum(-1)
    b1 = (gx * gt).sum(-1)
    b2 = (gy * gt).sum(-1)
    u0, v0 = flow[..., 0].copy(), flow[..., 1].copy()
    c1 = j11 * u0 + j12 * v0 - b1
    c2 = j12 * u0 + j22 * v0 - b2
    m11, m22 = alpha2 + j11, alpha2 + j22
    det = m11 * m22 - j12 * j12
    u, v = u0.copy(), v0.copy()
    for _ in range(iters):
        ub = ndimage.convolve(u, _HS_KERNEL, mode="nearest")
        vb = ndimage.convolve(v, _HS_KERNEL, mode="nearest")
        r1 = alpha2 * ub + c1
        r2 = alpha2 * vb + c2
        u = (m22 * r1 - j12 * r2) / det
        v = (m11 * r2 - j12 * r1) / det
    return np.stack([u, v], axis=-1)


def compute_flow(a, b, levels=3, iters=100, smoothness=15.0):
    """Dense flow from frame ``a`` to frame ``b`` (coarse-to-fine Horn-Schunck).

    Colour channels are stacked into one data term; each pyramid level warps
    ``b`` by the current estimate and runs ``iters`` Jacobi sweeps.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise VideoError(f"flow: dimension mismatch {a.shape} vs {b.shape}")
    pa, pb = [ndimage.gaussian_filter(a, (1.0, 1.0, 0))], [ndimage.gaussian_filter(b, (1.0, 1.0, 0))]
    for _ in range(levels - 1):
        if min(pa[-1].shape[:2]) < MIN_SIDE:
            break
        pa.append(_downsample(pa[-1]))
        pb.append(_downsample(pb[-1]))
    flow = np.zeros(pa[-1].shape[:2] + (2,))
    alpha2 = float(smoothness) ** 2
    for lvl in range(len(pa) - 1, -1, -1):
        if flow.shape[:2] != pa[lvl].shape[:2]:
            flow = _upsample_flow(flow, pa[lvl].shape[:2])
        flow = _hs_level(pa[lvl], pb[lvl], flow, iters, alpha2)
    return np.nan_to_num(flow, nan=0.0, posinf=0.0, neginf=0.0)


def video_flows(video, levels=3, iters=100, smoothness=15.0):
    """Forward flows for every consecutive pair plus one flow per frame.

    Returns ``(forward, per_frame)``; ``forward[t]`` maps frame t to t+1 and
    ``per_frame`` appends, for the last frame, the negated flow towards the
    previous frame.
    """
    forward = [compute_flow(video.frames[t], video.frames[t + 1], levels, iters, smoothness)
               for t in range(video.n_frames - 1)]
    last = -compute_flow(video.frames[-1], video.frames[-2], levels, iters, smoothness)
    return forward, forward + [last]


# -- synthetic video sets ----------------------------------------------------

@dataclass
class ObjectSpec:
    label: int
    shape: str  # "rectangle" | "ellipse"
    size: tuple  # (width, height)
    color: tuple  # (r, g, b)


@dataclass
class Placement:
    """Per-video trajectory of one object: top-left corner per frame."""
    label: int
    start: tuple = (0.0, 0.0)
    velocity: tuple = (0.0, 0.0)
    positions: list | None = None
    hidden: tuple | None = None  # inclusive frame interval

    def position(self, t):
        if self.positions is not None:
            return tuple(self.positions[t])
        return (self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)

    def visible(self, t):
        return self.hidden is None or not (self.hidden[0] <= t <= self.hidden[1])


@dataclass
class Background:
    kind: str = "flat"  # "flat" | "textured"
    color: tuple = (128, 128, 128)
    amplitude: float = 30.0
    scale: int = 8
    seed: int = 0


@dataclass
class VideoSpec:
    id: str
    background: Background
    placements: list


@dataclass
class SyntheticSpec:
    name: str
    frames: int
    width: int
    height: int
    objects: list
    videos: list
    config: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        try:
            objects = [ObjectSpec(int(o["label"]), o.get("shape", "rectangle"),
                                  tuple(o["size"]), tuple(o["color"])) for o in d["objects"]]
            videos = []
            for i, v in enumerate(d["videos"]):
                bg = Background(**v.get("background", {}))
                placements = [
                    Placement(
                        label=int(p["label"]),
                        start=tuple(p.get("start", (0, 0))),
                        velocity=tuple(p.get("velocity", (0, 0))),
                        positions=p.get("positions"),
                        hidden=tuple(p["hidden"]) if p.get("hidden") else None,
                    )
                    for p in v["objects"]
                ]
                videos.append(VideoSpec(v.get("id", f"video{i + 1}"), bg, placements))
            return cls(d.get("name", "synthetic"), int(d["frames"]), int(d["width"]),
                       int(d["height"]), objects, videos, dict(d.get("config", {})))
        except (KeyError, TypeError) as exc:
            raise VideoError(f"invalid synthetic spec: {exc}") from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _value_noise(h, w, scale, rng):
    gh, gw = h // scale + 2, w // scale + 2
    grid = rng.random((gh, gw))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) / scale
    return ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest")


def render_background(bg, h, w):
    base = np.broadcast_to(np.asarray(bg.color, dtype=np.float64), (h, w, 3)).copy()
    if bg.kind == "flat":
        return base
    if bg.kind != "textured":
        raise VideoError(f"unknown background kind {bg.kind!r}")
    rng = np.random.default_rng(bg.seed)
    lum = _value_noise(h, w, bg.scale, rng) - 0.5
    chroma = _value_noise(h, w, bg.scale * 2, rng) - 0.5
    base += 2 * bg.amplitude * lum[..., None]
    base[..., 0] += bg.amplitude * chroma
    base[..., 2] -= bg.amplitude * chroma
    return base


def _shape_mask(obj, x, y, h, w):
    ow, oh = obj.size
    yy, xx = np.mgrid[0:h, 0:w]
    x0, y0 = int(round(x)), int(round(y))
    if obj.shape == "rectangle":
        return (xx >= x0) & (xx < x0 + ow) & (yy >= y0) & (yy < y0 + oh)
    if obj.shape == "ellipse":
        cx, cy = x0 + (ow - 1) / 2.0, y0 + (oh - 1) / 2.0
        return ((xx - cx) / (ow / 2.0)) ** 2 + ((yy - cy) / (oh / 2.0)) ** 2 <= 1.0
    raise VideoError(f"unknown shape {obj.shape!r}")


def generate_synthetic_set(spec):
    """Render every video of ``spec``.

    Returns ``(videos, ground_truth)`` where ``ground_truth[i]`` is a
    ``(T, H, W)`` uint8 label array (0 = background, k = object k).  Objects
    are drawn in placement order, later ones on top.
    """
    objects = {o.label: o for o in spec.objects}
    h, w = spec.height, spec.width
    videos, gts = [], []
    for vs in spec.videos:
        bg = render_background(vs.background, h, w)
        frames = np.empty((spec.frames, h, w, 3), dtype=np.uint8)
        labels = np.zeros((spec.frames, h, w), dtype=np.uint8)
        for t in range(spec.frames):
            img = bg.copy()
            painted = {}
            for pl in vs.placements:
                if pl.label not in objects:
                    raise VideoError(f"{vs.id}: unknown object label {pl.label}")
                if not pl.visible(t):
                    continue
                obj = objects[pl.label]
                x, y = pl.position(t)
                ow, oh = obj.size
                if x < 0 or y < 0 or round(x) + ow > w or round(y) + oh > h:
                    raise VideoError(f"{vs.id}: object {pl.label} out of frame bounds at frame {t}")
                m = _shape_mask(obj, x, y, h, w)
                for other_label, other_mask in painted.items():
                    if tuple(objects[other_label].color) == tuple(obj.color) and (other_mask & m).any():
                        raise VideoError(
                            f"{vs.id}: overlapping objects {other_label} and {pl.label} share a colour")
                painted[pl.label] = m
                img[m] = obj.color
                labels[t][m] = pl.label
            frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        videos.append(Video(vs.id, frames))
        gts.append(labels)
    return videos, gts
