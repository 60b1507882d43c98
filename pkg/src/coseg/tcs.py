"""Temporally consistent superpixels.

Frame 0 is over-segmented with SLIC.  Each later frame inherits labels by
splatting the previous label image along the flow; pixels that received no
label or whose colour changed beyond ``color_gate`` are re-assigned with the
same local k-means, and whatever the surviving superpixels cannot explain is
covered by freshly labelled ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import count

import numpy as np

from . import kernels
from ._util import grid_edges, label_components
from .pnm import write_pgm
from .vidcore import rgb_to_lab


class TcsError(ValueError):
    pass


@dataclass(frozen=True)
class SuperpixelMap:
    labels: np.ndarray  # (T, H, W) int32, labels shared across frames
    label_count: int

    def __post_init__(self):
        self.labels.flags.writeable = False

    @property
    def n_frames(self):
        return self.labels.shape[0]

    def frame_labels(self, t):
        return np.unique(self.labels[t])

    def count(self, t):
        return len(self.frame_labels(t))

    def dump(self, directory):
        """Write one 16-bit PGM label image per frame."""
        from pathlib import Path
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for t, lab in enumerate(self.labels):
            write_pgm(directory / f"{t:03d}.pgm", lab.astype(np.uint16))

    @classmethod
    def load(cls, directory):
        from pathlib import Path
        from .pnm import read_pnm
        files = sorted(Path(directory).glob("*.pgm"))
        labels = np.stack([read_pnm(p).astype(np.int32) for p in files])
        return cls(labels, int(len(np.unique(labels))))


def labels_of_mask(spm, t, mask):
    """Labels of frame ``t`` whose superpixel lies at least half inside ``mask``."""
    lab = spm.labels[t]
    if mask.shape != lab.shape:
        raise TcsError("mask dimensions do not match the superpixel map")
    flat = lab.ravel()
    total = np.bincount(flat)
    inside = np.bincount(flat[mask.ravel()], minlength=len(total))
    hit = np.nonzero((inside > 0) & (2 * inside >= total))[0]
    return frozenset(int(v) for v in hit)


def mask_of_labels(spm, t, labels):
    if not labels:
        return np.zeros(spm.labels.shape[1:], dtype=bool)
    return np.isin(spm.labels[t], np.fromiter(labels, dtype=np.int64))


# -- SLIC --------------------------------------------------------------------

def _features(lab):
    h, w = lab.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.concatenate([lab, yy[..., None], xx[..., None]], axis=-1).reshape(-1, 5)


def _centers_from(labels, feats, n):
    """Mean (L, a, b, y, x) per index; rows without pixels are NaN."""
    flat = labels.ravel()
    ok = flat >= 0
    cnt = np.bincount(flat[ok], minlength=n).astype(np.float64)
    out = np.full((n, 5), np.nan)
    nz = cnt > 0
    for c in range(5):
        s = np.bincount(flat[ok], weights=feats[ok, c], minlength=n)
        out[nz, c] = s[nz] / cnt[nz]
    return out


def _grid_seeds(h, w, n_segments):
    nx = max(1, int(round(np.sqrt(n_segments * w / h))))
    ny = max(1, int(round(n_segments / nx)))
    ys = (np.arange(ny) + 0.5) * h / ny
    xs = (np.arange(nx) + 0.5) * w / nx
    step = float(np.sqrt(h * w / (nx * ny)))
    return [(y, x) for y in ys for x in xs], step


def _kmeans_iterations(lab, feats, centers, step, compactness, iters, active, idx):
    """Alternate assignment/update on ``active`` pixels; ``idx`` updated in place."""
    for _ in range(iters):
        before = idx[active].copy()
        kernels.slic_assign(lab, centers, step, compactness, active, idx)
        fresh = _centers_from(idx, feats, centers.shape[0])
        if np.array_equal(before, idx[active]):
            break
        centers = fresh
    return centers


def slic(lab, n_segments, compactness=10.0, iters=10):
    """SLIC over-segmentation of one Lab image; returns ``(labels, step)``."""
    h, w = lab.shape[:2]
    lab = np.ascontiguousarray(lab, dtype=np.float64)
    seeds, step = _grid_seeds(h, w, n_segments)
    gy, gx = np.gradient(lab, axis=(0, 1))
    grad = (gx ** 2 + gy ** 2).sum(-1)
    centers = np.empty((len(seeds), 5))
    for k, (y, x) in enumerate(seeds):
        yi, xi = int(y), int(x)
        y0, y1 = max(yi - 1, 0), min(yi + 2, h)
        x0, x1 = max(xi - 1, 0), min(xi + 2, w)
        win = grad[y0:y1, x0:x1]
        dy, dx = np.unravel_index(np.argmin(win), win.shape)
        yi, xi = y0 + dy, x0 + dx
        centers[k] = (*lab[yi, xi], yi, xi)
    feats = _features(lab)
    idx = np.full((h, w), -1, dtype=np.int32)
    active = np.ones((h, w), dtype=bool)
    _kmeans_iterations(lab, feats, centers, step, compactness, iters, active, idx)
    return idx, step


def enforce_connectivity(labels, min_size, fresh):
    """Give every label a single 4-connected region.

    The largest component of each label keeps it; stray components smaller
    than ``min_size`` join the neighbour sharing the longest border, larger
    ones receive ``next(fresh)``.
    """
    labels = labels.copy()
    h, w = labels.shape
    a, b = grid_edges(h, w)
    for _ in range(20):
        comp, n = label_components(labels)
        cflat = comp.ravel()
        first = np.full(n, -1, dtype=np.int64)
        first[cflat[::-1]] = np.arange(cflat.size)[::-1]
        comp_label = labels.ravel()[first]
        sizes = np.bincount(cflat, minlength=n)
        order = np.lexsort((np.arange(n), -sizes, comp_label))
        is_main = np.zeros(n, dtype=bool)
        lead = np.ones(n, dtype=bool)
        lead[1:] = comp_label[order[1:]] != comp_label[order[:-1]]
        is_main[order[lead]] = True
        stray = np.nonzero(~is_main)[0]
        if len(stray) == 0:
            break
        new_label = comp_label.copy()
        small = stray[sizes[stray] < min_size]
        for c in stray[sizes[stray] >= min_size]:
            new_label[c] = next(fresh)
        if len(small):
            ca, cb = cflat[a], cflat[b]
            diff = ca != cb
            src = np.concatenate([ca[diff], cb[diff]])
            dst = np.concatenate([cb[diff], ca[diff]])
            is_small = np.zeros(n, dtype=bool)
            is_small[small] = True
            sel = is_small[src]
            src, dst = src[sel], dst[sel]
            key = src.astype(np.int64) * n + dst
            uk, cnt = np.unique(key, return_counts=True)
            us, ud = uk // n, uk % n
            # longest shared border, ties to the lowest neighbour label
            o = np.lexsort((comp_label[ud], -cnt, us))
            us, ud = us[o], ud[o]
            keep = np.ones(len(us), dtype=bool)
            keep[1:] = us[1:] != us[:-1]
            new_label[us[keep]] = comp_label[ud[keep]]
        labels = new_label[comp]
    return labels.astype(np.int32)


# -- temporal propagation ----------------------------------------------------

def _splat(prev_labels, prev_lab, flow):
    h, w = prev_labels.shape
    yy, xx = np.mgrid[0:h, 0:w]
    tx = np.rint(xx + flow[..., 0]).astype(np.int64)
    ty = np.rint(yy + flow[..., 1]).astype(np.int64)
    ok = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    mag = np.hypot(flow[..., 0], flow[..., 1])[ok]
    src = np.nonzero(ok.ravel())[0]
    dst = (ty[ok] * w + tx[ok])
    # faster-moving pixels are written last and win collisions
    order = np.lexsort((src, mag))
    src, dst = src[order], dst[order]
    rev_dst = dst[::-1]
    _, first = np.unique(rev_dst, return_index=True)
    winners = len(dst) - 1 - first
    warped = np.full(h * w, -1, dtype=np.int64)
    color = np.full((h * w, 3), np.nan)
    warped[dst[winners]] = prev_labels.ravel()[src[winners]]
    color[dst[winners]] = prev_lab.reshape(-1, 3)[src[winners]]
    return warped.reshape(h, w), color.reshape(h, w, 3)


def _propagate(prev_labels, prev_lab, lab, flow, step, compactness, iters, gate, fresh):
    h, w = prev_labels.shape
    feats = _features(lab)
    warped, src_color = _splat(prev_labels, prev_lab, flow)
    with np.errstate(invalid="ignore"):
        diff = np.sqrt(((lab - src_color) ** 2).sum(-1))
    changed = (warped < 0) | ~(diff <= gate)

    ids = np.unique(warped[~changed])
    idx = np.full((h, w), -1, dtype=np.int32)
    if len(ids):
        idx[~changed] = np.searchsorted(ids, warped[~changed])
        centers = _centers_from(idx, feats, len(ids))
        if changed.any():
            centers = _kmeans_iterations(lab, feats, centers, step, compactness, iters, changed, idx)
        cl = np.where(idx >= 0, idx, 0)
        cdist = np.sqrt(((lab - centers[cl, :3]) ** 2).sum(-1))
        unexplained = changed & ((idx < 0) | (cdist > gate))
    else:
        unexplained = np.ones((h, w), dtype=bool)
    out = np.where(idx >= 0, ids[np.maximum(idx, 0)] if len(ids) else -1, -1)

    if unexplained.any():
        gys = np.arange(step / 2, h, step).astype(int)
        gxs = np.arange(step / 2, w, step).astype(int)
        seeds = [(y, x) for y in gys for x in gxs if unexplained[y, x]]
        if not seeds:
            ys, xs = np.nonzero(unexplained)
            mid = len(ys) // 2
            seeds = [(ys[mid], xs[mid])]
        centers = np.array([(*lab[y, x], y, x) for y, x in seeds], dtype=np.float64)
        sub = np.full((h, w), -1, dtype=np.int32)
        _kmeans_iterations(lab, feats, centers, step, compactness, iters, unexplained, sub)
        # pixels no new seed reached fall back to nearest seed in position
        miss = unexplained & (sub < 0)
        if miss.any():
            ys, xs = np.nonzero(miss)
            d = (ys[:, None] - centers[None, :, 3]) ** 2 + (xs[:, None] - centers[None, :, 4]) ** 2
            sub[ys, xs] = d.argmin(1)
        new_ids = np.array([next(fresh) for _ in range(len(centers))])
        out[unexplained] = new_ids[sub[unexplained]]

    out = enforce_connectivity(out, max(1, int(step * step / 4)), fresh)

    # colour gate on inherited labels
    flat_prev = prev_labels.ravel()
    flat_out = out.ravel()
    for lbl in np.intersect1d(np.unique(flat_out), np.unique(flat_prev)):
        m_now = flat_out == lbl
        m_prev = flat_prev == lbl
        d = np.linalg.norm(lab.reshape(-1, 3)[m_now].mean(0) - prev_lab.reshape(-1, 3)[m_prev].mean(0))
        if d > gate:
            flat_out[m_now] = next(fresh)
    return flat_out.reshape(h, w)


def compute_tcs(video, flows, target_count, compactness=10.0, iters=10, color_gate=20.0):
    """Temporally consistent superpixels for every frame of ``video``.

    ``flows`` holds one forward flow per consecutive frame pair.
    """
    if len(flows) != video.n_frames - 1:
        raise TcsError(f"expected {video.n_frames - 1} flow fields, got {len(flows)}")
    if target_count < 16:
        raise TcsError("target superpixel count must be at least 16")
    labs = [np.ascontiguousarray(rgb_to_lab(f)) for f in video.frames]
    first, step = slic(labs[0], target_count, compactness, iters)
    fresh = count(int(first.max()) + 1)
    first = enforce_connectivity(first, max(1, int(step * step / 4)), fresh)
    out = [first]
    for t in range(1, video.n_frames):
        out.append(_propagate(out[-1], labs[t - 1], labs[t], flows[t - 1], step,
                              compactness, iters, color_gate, fresh))
    labels = np.stack(out).astype(np.int32)
    return SuperpixelMap(labels, int(len(np.unique(labels))))
