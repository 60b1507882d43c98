"""Region descriptors, chi-squared distances and cluster-based co-saliency."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import kmeans
from .vidcore import rgb_to_lab

EPS = 1e-12
LAB_BINS = 13
RGB_BINS = 26
COLOR_BINS = 3 * LAB_BINS + 3 * RGB_BINS  # 117
HOG_CELLS = 3
HOG_ORIENTATIONS = 9
SHAPE_BINS = HOG_CELLS * HOG_CELLS * HOG_ORIENTATIONS  # 81
FLOW_ORIENTATIONS = 8
FLOW_MAGNITUDE_EDGES = (0.25, 1.0, 2.5)  # first range holds (near-)zero vectors
FLOW_BINS = FLOW_ORIENTATIONS * (len(FLOW_MAGNITUDE_EDGES) + 1)

_LAB_RANGES = ((0.0, 100.0), (-128.0, 128.0), (-128.0, 128.0))


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class RegionFeature:
    color: np.ndarray  # (117,)
    shape: np.ndarray  # (81,)


def chi_squared(h1, h2):
    """Half chi-squared distance; bounded by 1 for L1-normalised inputs."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise FeatureError(f"histogram length mismatch {h1.shape} vs {h2.shape}")
    return float(0.5 * np.sum(_ratio((h1 - h2) ** 2, h1 + h2)))


def _ratio(num, den):
    # bins empty in both histograms contribute nothing
    return np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=den > 0)


def chi_squared_matrix(a, b):
    """Pairwise chi-squared distances between the rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)[:, None, :]
    b = np.asarray(b, dtype=np.float64)[None, :, :]
    return 0.5 * np.sum(_ratio((a - b) ** 2, a + b), axis=-1)


def _require(mask):
    if not np.any(mask):
        raise FeatureError("empty region")


def color_bins(frame):
    """Per-pixel bin index (into the 117-vector) for each of the 6 channels."""
    lab = rgb_to_lab(frame)
    out = np.empty(frame.shape[:2] + (6,), dtype=np.int64)
    for c, (lo, hi) in enumerate(_LAB_RANGES):
        b = np.floor((lab[..., c] - lo) / (hi - lo) * LAB_BINS).astype(np.int64)
        out[..., c] = np.clip(b, 0, LAB_BINS - 1) + c * LAB_BINS
    rgb = np.asarray(frame, dtype=np.int64)
    for c in range(3):
        out[..., 3 + c] = rgb[..., c] * RGB_BINS // 256 + 3 * LAB_BINS + c * RGB_BINS
    return out


def color_histogram(frame, mask, bins=None):
    """117-bin colour histogram: L, a, b at 13 bins and R, G, B at 26 bins."""
    _require(mask)
    if bins is None:
        bins = color_bins(frame)
    sel = bins[mask].ravel()
    hist = np.bincount(sel, minlength=COLOR_BINS).astype(np.float64)
    return hist / hist.sum()


def gray_gradients(frame):
    g = np.asarray(frame, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])
    gy, gx = np.gradient(g)
    return gx, gy


def shape_histogram(frame, mask, gradients=None):
    """81-bin HOG of the region's bounding box (3x3 cells, 9 unsigned orientations).

    Gradient magnitude outside the mask is zeroed; the 81 values are
    L2-Hys normalised as one block and then L1-normalised.  A region without
    any gradient yields the uniform histogram.
    """
    _require(mask)
    gx, gy = gray_gradients(frame) if gradients is None else gradients
    ys, xs = np.nonzero(mask)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    bh, bw = y1 - y0, x1 - x0
    m = mask[y0:y1, x0:x1]
    gxb, gyb = gx[y0:y1, x0:x1], gy[y0:y1, x0:x1]
    mag = np.hypot(gxb, gyb) * m
    ang = np.mod(np.degrees(np.arctan2(gyb, gxb)), 180.0)
    obin = np.minimum((ang / (180.0 / HOG_ORIENTATIONS)).astype(np.int64), HOG_ORIENTATIONS - 1)
    cy = np.minimum(np.arange(bh) * HOG_CELLS // bh, HOG_CELLS - 1)
    cx = np.minimum(np.arange(bw) * HOG_CELLS // bw, HOG_CELLS - 1)
    cell = (cy[:, None] * HOG_CELLS + cx[None, :]) * HOG_ORIENTATIONS + obin
    hist = np.bincount(cell.ravel(), weights=mag.ravel(), minlength=SHAPE_BINS)
    norm = np.sqrt(np.sum(hist ** 2))
    if norm <= EPS:
        return np.full(SHAPE_BINS, 1.0 / SHAPE_BINS)
    hist = np.minimum(hist / norm, 0.2)
    hist /= np.sqrt(np.sum(hist ** 2)) + EPS
    return hist / hist.sum()


def region_feature(frame, mask, bins=None, gradients=None):
    return RegionFeature(color_histogram(frame, mask, bins), shape_histogram(frame, mask, gradients))


def flow_histogram(flow, mask):
    """32-bin flow histogram: 8 orientations x 4 magnitude ranges."""
    _require(mask)
    v = flow[mask]
    mag = np.hypot(v[:, 0], v[:, 1])
    mbin = np.searchsorted(FLOW_MAGNITUDE_EDGES, mag, side="right")
    ang = np.mod(np.degrees(np.arctan2(v[:, 1], v[:, 0])) + 180.0 / FLOW_ORIENTATIONS, 360.0)
    obin = np.minimum((ang / (360.0 / FLOW_ORIENTATIONS)).astype(np.int64), FLOW_ORIENTATIONS - 1)
    obin[mbin == 0] = 0
    hist = np.bincount(mbin * FLOW_ORIENTATIONS + obin, minlength=FLOW_BINS).astype(np.float64)
    return hist / hist.sum()


def feature_distance(f1, f2, color_weight=2.0):
    """Weighted mean of colour and shape chi-squared distances."""
    if color_weight <= 0:
        raise FeatureError("colour weight must be positive")
    return (color_weight * chi_squared(f1.color, f2.color) + chi_squared(f1.shape, f2.shape)) / (color_weight + 1.0)


def co_saliency(videos, cluster_count=8, seed=0, max_samples=20000):
    """Cluster-based co-saliency maps, one ``(T, H, W)`` array per video.

    Pixels of all frames of all videos are clustered in Lab; each cluster's
    saliency multiplies a contrast cue, a spatial (centre-bias) cue and a
    repeatedness cue across videos.  Maps are min-max normalised per video.
    """
    if not videos:
        raise FeatureError("co-saliency needs at least one video")
    if cluster_count < 2:
        raise FeatureError("cluster count must be at least 2")
    labs = [rgb_to_lab(v.frames).reshape(-1, 3) for v in videos]
    pooled = np.concatenate(labs)
    rng = np.random.default_rng(seed)
    sample = pooled if len(pooled) <= max_samples else pooled[np.sort(rng.choice(len(pooled), max_samples, replace=False))]
    centers, _ = kmeans(sample, cluster_count, seed=seed)
    k = len(centers)
    assigns = [(((lab[:, None, :] - centers[None]) ** 2).sum(-1)).argmin(1) for lab in labs]

    sizes = np.zeros(k)
    per_video = np.zeros((len(videos), k))
    spatial_sum = np.zeros(k)
    for i, (v, a) in enumerate(zip(videos, assigns)):
        h, w = v.shape
        yy, xx = np.mgrid[0:h, 0:w]
        d = np.hypot(yy - (h - 1) / 2.0, xx - (w - 1) / 2.0) / np.hypot((h - 1) / 2.0, (w - 1) / 2.0)
        dist = np.broadcast_to(d, (v.n_frames, h, w)).ravel()
        cnt = np.bincount(a, minlength=k)
        per_video[i] = cnt
        sizes += cnt
        spatial_sum += np.bincount(a, weights=dist, minlength=k)

    weights = sizes / sizes.sum()
    cdist = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
    contrast = (cdist * weights[None, :]).sum(1)
    spatial = 1.0 - np.divide(spatial_sum, sizes, out=np.ones(k), where=sizes > 0)
    share = per_video / np.maximum(per_video.sum(0, keepdims=True), 1)
    repeat = 1.0 / (1.0 + np.var(share, axis=0))
    cues = [contrast, spatial, repeat]
    sal = np.ones(k)
    for c in cues:
        top = c.max()
        sal *= c / top if top > 0 else 0.0

    maps = []
    for v, a in zip(videos, assigns):
        s = sal[a].reshape(v.n_frames, *v.shape)
        lo, hi = s.min(), s.max()
        maps.append((s - lo) / (hi - lo) if hi > lo else np.zeros_like(s))
    return maps


def saliency_score(saliency, t, mask):
    """Mean saliency of frame ``t`` over the region."""
    _require(mask)
    return float(saliency[t][mask].mean())
