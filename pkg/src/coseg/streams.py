"""Proposal expansion across time, temporal proposal streams and their merging."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._util import kmeans, relabel_sequential
from .features import RegionFeature, chi_squared_matrix, region_feature
from .proposals import PREDICTED, Proposal, area_ok, motion_chi2, motion_score
from .refine import segment_binary
from .tcs import labels_of_mask, mask_of_labels

_HARD = 1e4


class StreamError(ValueError):
    pass


def overlap_ratio(a, b):
    """Intersection over union of two boolean masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise StreamError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        raise StreamError("overlap of two empty masks is undefined")
    return np.count_nonzero(a & b) / union


def _ious(stack, mask):
    """IoU of ``mask`` against each mask in a ``(N, H, W)`` stack."""
    inter = np.count_nonzero(stack & mask, axis=(1, 2))
    union = np.count_nonzero(stack | mask, axis=(1, 2))
    return np.divide(inter, union, out=np.zeros(len(stack)), where=union > 0)


# ---------------------------------------------------------------- warping

@dataclass
class WarpParams:
    refine: bool = True
    margin: int = 6  # px around the label-warped mask open to relabelling
    smoothness: float = 1.0
    seed_prior: float = 0.7
    color_bins: int = 8  # per Lab axis for the region colour models
    stable_gate: float = 10.0  # Lab change below which a same-label pixel is trusted


def _quantize(lab, n):
    lo = np.array([0.0, -128.0, -128.0])
    span = np.array([100.0, 256.0, 256.0])
    q = np.clip(((lab - lo) / span * n).astype(np.int64), 0, n - 1)
    return (q[..., 0] * n + q[..., 1]) * n + q[..., 2]


def warp_proposal(p, spm, to_frame, lab=None, params=None):
    """Carry a proposal to an adjacent frame through its TCS labels.

    The label-warped mask is then refined by a two-label graph cut on the
    pixels whose label or colour changed between the frames; elsewhere the
    label warp is trusted.  ``lab`` is the video in Lab (``(T, H, W, 3)``);
    without it no refinement happens.
    """
    if abs(to_frame - p.frame) != 1 or not 0 <= to_frame < spm.n_frames:
        raise StreamError(f"frame {to_frame} is not adjacent to {p.frame}")
    base = mask_of_labels(spm, to_frame, p.tcs_labels)
    params = params or WarpParams()
    if lab is None or not params.refine or not base.any():
        return base
    src, dst = lab[p.frame], lab[to_frame]
    stable = (spm.labels[to_frame] == spm.labels[p.frame]) & \
        (np.linalg.norm(dst - src, axis=-1) < params.stable_gate)
    window = ndimage.binary_dilation(base, np.ones((3, 3), bool), iterations=params.margin)
    free = window & ~stable
    if not free.any():
        return base

    ys, xs = np.nonzero(window)
    sl = (slice(ys.min(), ys.max() + 1), slice(xs.min(), xs.max() + 1))
    q = _quantize(dst[sl], params.color_bins)
    nb = params.color_bins ** 3
    b_in = base[sl]
    ring = window[sl] & ~b_in
    h_fg = np.bincount(q[b_in], minlength=nb) + 1.0
    h_bg = np.bincount(q[ring], minlength=nb) + 1.0
    prior = np.where(b_in, params.seed_prior, 1.0 - params.seed_prior)
    fg_cost = -np.log(h_fg[q] / h_fg.sum()) - np.log(prior)
    bg_cost = -np.log(h_bg[q] / h_bg.sum()) - np.log1p(-prior)
    fixed = ~free[sl]
    fg_cost[fixed & b_in] = 0.0
    bg_cost[fixed & b_in] = _HARD
    fg_cost[fixed & ~b_in] = _HARD
    bg_cost[fixed & ~b_in] = 0.0

    h, w = q.shape
    idx = np.arange(h * w).reshape(h, w)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    flat = dst[sl].reshape(-1, 3)
    d2 = ((flat[a] - flat[b]) ** 2).sum(1)
    beta = float(d2.mean()) or 1.0
    cut = segment_binary(fg_cost, bg_cost, a, b, params.smoothness * np.exp(-d2 / (2.0 * beta)))
    out = np.zeros_like(base)
    out[sl] = cut
    return out


class WarpCache:
    """Memoised :func:`warp_proposal` keyed by proposal identity and target frame."""

    def __init__(self, spm, lab=None, params=None):
        self.spm, self.lab, self.params = spm, lab, params
        self._memo = {}

    def __call__(self, p, to_frame):
        key = (id(p), to_frame)
        hit = self._memo.get(key)
        if hit is None:
            hit = (p, warp_proposal(p, self.spm, to_frame, self.lab, self.params))
            self._memo[key] = hit
        return hit[1]


# ---------------------------------------------------------------- expansion

def expand_proposals(per_frame, spm, gamma, video, flows, mean_chi2, warp=None, dilation=0.2):
    """Add warped copies of proposals where the neighbouring frame lacks a match.

    A forward sweep then a backward sweep; each proposal (original or already
    predicted) is warped to the adjacent frame and appended there as a
    predicted proposal when its best overlap with the existing pool is below
    ``gamma``.  Input lists are left untouched.
    """
    if not 0.0 < gamma < 1.0:
        raise StreamError("gamma must lie in (0, 1)")
    warp = warp or WarpCache(spm)
    lists = [list(props) for props in per_frame]
    stacks = [np.stack([p.mask for p in props]) if props else None for props in lists]
    t_n = len(lists)

    def add(mask, src, to):
        if not mask.any() or not area_ok(mask):
            return
        if stacks[to] is not None and _ious(stacks[to], mask).max() >= gamma:
            return
        m = motion_score(motion_chi2(mask, flows[to], dilation), mean_chi2)
        frame = video.frames[to]
        lists[to].append(Proposal(video.id, to, mask, labels_of_mask(spm, to, mask), src.objectness,
                                  m, src.objectness + m, len(lists[to]), PREDICTED,
                                  region_feature(frame, mask)))
        stacks[to] = mask[None] if stacks[to] is None else np.concatenate([stacks[to], mask[None]])

    for t in range(t_n - 1):
        for p in list(lists[t]):
            add(warp(p, t + 1), p, t + 1)
    for t in range(t_n - 1, 0, -1):
        for p in list(lists[t]):
            add(warp(p, t - 1), p, t - 1)
    return lists


# ---------------------------------------------------------------- streams

def _mean_feature(props):
    feats = [p.feature for p in props]
    if any(f is None for f in feats):
        return None
    return RegionFeature(np.mean([f.color for f in feats], 0), np.mean([f.shape for f in feats], 0))


@dataclass(frozen=True, eq=False)
class Stream:
    video_id: str
    entries: dict
    n_frames: int
    mean_combined: float = field(init=False)
    feature: RegionFeature = field(init=False, repr=False)
    complete: bool = field(init=False)

    def __post_init__(self):
        if not self.entries:
            raise StreamError("a stream needs at least one entry")
        ordered = dict(sorted(self.entries.items()))
        for t, p in ordered.items():
            if p.video_id != self.video_id or p.frame != t:
                raise StreamError(f"entry at frame {t} does not belong to stream")
        object.__setattr__(self, "entries", ordered)
        props = list(ordered.values())
        object.__setattr__(self, "mean_combined", float(np.mean([p.combined for p in props])))
        object.__setattr__(self, "feature", _mean_feature(props))
        object.__setattr__(self, "complete", len(ordered) == self.n_frames)

    @property
    def frames(self):
        return list(self.entries)

    def __len__(self):
        return len(self.entries)


@dataclass
class StreamSet:
    video_id: str
    streams: list

    def __post_init__(self):
        for s in self.streams:
            if s.video_id != self.video_id:
                raise StreamError("stream from a different video in set")

    def __len__(self):
        return len(self.streams)

    def __iter__(self):
        return iter(self.streams)


def _top(props, x, taken):
    order = sorted(range(len(props)), key=lambda i: (-props[i].combined, i))[:x]
    return [props[i] for i in order if id(props[i]) not in taken]


def build_streams(per_frame, spm, x_init, x_grow, gamma=0.6, warp=None, video_id=None):
    """Greedy frame-by-frame chaining of proposals into streams.

    Top ``x_init`` proposals of frame 0 open streams; each live stream
    continues with the unclaimed proposal of best overlap with its warped
    entry (if at least ``gamma``) and otherwise ends.  Unclaimed members of
    each later frame's top ``x_grow`` open new streams.
    """
    if x_init < 1 or x_grow < 0:
        raise StreamError("need x_init >= 1 and x_grow >= 0")
    warp = warp or WarpCache(spm)
    t_n = len(per_frame)
    if video_id is None:
        video_id = next((p.video_id for props in per_frame for p in props), "")
    taken = set()
    chains = []
    live = []
    for p in _top(per_frame[0], x_init, taken):
        taken.add(id(p))
        chains.append({0: p})
        live.append(len(chains) - 1)
    for t in range(t_n - 1):
        props = per_frame[t + 1]
        stack = np.stack([p.mask for p in props]) if props else None
        still = []
        for k in live:
            m = warp(chains[k][t], t + 1)
            if stack is None or not m.any():
                continue
            ious = _ious(stack, m)
            for i, p in enumerate(props):
                if id(p) in taken:
                    ious[i] = -1.0
            best = int(np.argmax(ious))
            if ious[best] >= gamma:
                taken.add(id(props[best]))
                chains[k][t + 1] = props[best]
                still.append(k)
        for p in _top(props, x_grow, taken):
            taken.add(id(p))
            chains.append({t + 1: p})
            still.append(len(chains) - 1)
        live = still
    return StreamSet(video_id, [Stream(video_id, c, t_n) for c in chains])


# ---------------------------------------------------------------- merging

def _validate_affinity(affinity):
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StreamError("affinity must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise StreamError("affinity must be symmetric")
    if np.any(a < 0):
        raise StreamError("affinity must be non-negative")
    return a


def _laplacian_spectrum(a):
    d = a.sum(1)
    dinv = np.divide(1.0, np.sqrt(d), out=np.zeros(len(d)), where=d > 0)
    lap = np.eye(len(d)) - dinv[:, None] * a * dinv[None, :]
    return np.linalg.eigh(lap)


def spectral_cluster(affinity, k, seed=0):
    """Normalised-Laplacian spectral clustering; labels numbered by first appearance."""
    a = _validate_affinity(affinity)
    n = a.shape[0]
    if not 1 <= k <= n:
        raise StreamError(f"k={k} outside [1, {n}]")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    if k == n:
        return np.arange(n, dtype=np.int64)
    _, vecs = _laplacian_spectrum(a)
    u = vecs[:, :k]
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    u = np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)
    _, assign = kmeans(u, k, seed=seed)
    return relabel_sequential(assign)


def eigengap_count(affinity, k_max):
    """Cluster count in ``[1, k_max]`` at the largest gap of the Laplacian spectrum."""
    a = _validate_affinity(affinity)
    n = a.shape[0]
    k_max = min(k_max, n)
    if k_max <= 1:
        return 1
    vals, _ = _laplacian_spectrum(a)
    gaps = np.diff(vals[:k_max + 1])  # gaps[i] separates the first i + 1 eigenvalues
    return int(np.argmax(gaps)) + 1


def cluster_count(n_incomplete, large=20, small=5, cutoff=40):
    return large if n_incomplete > cutoff else small


def merge_streams(stream_set, y_clusters=None, seed=0, selection="eigengap"):
    """Keep complete streams, drop single-frame ones, merge the rest by colour clusters.

    With ``selection="eigengap"`` ``y_clusters`` caps the cluster count and
    the spectrum picks the actual number; ``"fixed"`` uses it as is.  Within
    a merged cluster, frames claimed by several streams keep the
    entry with the higher combined score (earlier stream on ties).
    """
    streams = list(stream_set.streams)
    complete = [s for s in streams if s.complete]
    rest = [s for s in streams if not s.complete and len(s) > 1]
    if y_clusters is None:
        y_clusters = cluster_count(len(rest))
    if y_clusters < 1:
        raise StreamError("y_clusters must be at least 1")
    if not rest:
        return StreamSet(stream_set.video_id, complete)
    k = min(y_clusters, len(rest))
    colors = np.array([s.feature.color for s in rest])
    chi = chi_squared_matrix(colors, colors)
    chi = (chi + chi.T) / 2.0
    np.fill_diagonal(chi, 0.0)
    iu = np.triu_indices(len(rest), 1)
    sigma = float(np.median(chi[iu])) if len(iu[0]) else 1.0
    if sigma <= 0:
        sigma = 1.0
    affinity = np.exp(-chi / sigma)
    if selection == "eigengap":
        k = eigengap_count(affinity, k)
    elif selection != "fixed":
        raise StreamError(f"unknown cluster selection {selection!r}")
    assign = spectral_cluster(affinity, k, seed=seed)
    merged = []
    for c in range(assign.max() + 1):
        members = [s for s, a in zip(rest, assign) if a == c]
        entries = {}
        for s in members:
            for t, p in s.entries.items():
                if t not in entries or p.combined > entries[t].combined:
                    entries[t] = p
        merged.append(Stream(stream_set.video_id, entries, members[0].n_frames))
    return StreamSet(stream_set.video_id, complete + merged)


def write_streams(directory, stream_set, per_frame):
    """Dump streams as CSV rows (stream, frame, index, rank, origin) plus entry masks.

    ``index`` is the entry's position in ``per_frame[frame]`` so the set can
    be rebuilt with :func:`read_streams`.
    """
    from .pnm import write_pgm
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    position = {id(p): i for props in per_frame for i, p in enumerate(props)}
    with open(directory / "streams.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["stream", "frame", "index", "rank", "origin"])
        for k, s in enumerate(stream_set.streams):
            for t, p in s.entries.items():
                wr.writerow([k, t, position[id(p)], p.rank, p.origin])
                write_pgm(directory / f"{k:03d}_{t:03d}.pgm", p.mask.astype(np.uint8) * 255)


def read_streams(directory, per_frame, video_id):
    chains = {}
    with open(Path(directory) / "streams.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            t = int(row["frame"])
            chains.setdefault(int(row["stream"]), {})[t] = per_frame[t][int(row["index"])]
    return StreamSet(video_id, [Stream(video_id, chains[k], len(per_frame)) for k in sorted(chains)])
