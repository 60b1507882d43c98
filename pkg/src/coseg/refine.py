"""Min-cut machinery and pixel-level spatio-temporal refinement of selected streams."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from ._util import grid_edges, kmeans
from .vidcore import rgb_to_lab

CAPACITY_SCALE = 1e6
_P_CLIP = 1e-4


class RefineError(ValueError):
    pass


@dataclass
class FlowNetwork:
    """Directed network; arc ``i`` runs ``tails[i] -> heads[i]`` with ``caps[i]``.

    ``rev_caps`` lets one arc carry independent capacity in the opposite
    direction (an undirected edge is ``caps == rev_caps``).
    """
    n_nodes: int
    source: int
    sink: int
    tails: np.ndarray
    heads: np.ndarray
    caps: np.ndarray
    rev_caps: np.ndarray = None

    def __post_init__(self):
        self.tails = np.asarray(self.tails, dtype=np.int64).ravel()
        self.heads = np.asarray(self.heads, dtype=np.int64).ravel()
        self.caps = np.asarray(self.caps, dtype=np.float64).ravel()
        if self.rev_caps is None:
            self.rev_caps = np.zeros_like(self.caps)
        self.rev_caps = np.asarray(self.rev_caps, dtype=np.float64).ravel()
        m = len(self.tails)
        if not (len(self.heads) == len(self.caps) == len(self.rev_caps) == m):
            raise RefineError("arc arrays differ in length")
        if self.source == self.sink:
            raise RefineError("source and sink must differ")
        for v in (self.source, self.sink):
            if not 0 <= v < self.n_nodes:
                raise RefineError(f"terminal {v} out of range")
        if m and (min(self.tails.min(), self.heads.min()) < 0
                  or max(self.tails.max(), self.heads.max()) >= self.n_nodes):
            raise RefineError("arc endpoint out of range")
        for c in (self.caps, self.rev_caps):
            if not np.all(np.isfinite(c)) or np.any(c < 0):
                raise RefineError("capacities must be finite and non-negative")

    @classmethod
    def from_arcs(cls, n_nodes, source, sink, arcs):
        """Build from ``(tail, head, capacity)`` triples."""
        arcs = list(arcs)
        if not arcs:
            return cls(n_nodes, source, sink, [], [], [])
        t, h, c = zip(*arcs)
        return cls(n_nodes, source, sink, t, h, c)


def max_flow(net, with_flows=False):
    """Max-flow value and the source side of a minimum cut.

    Capacities are scaled by 1e6 and rounded so the search runs on exact
    integers.  With ``with_flows`` the per-arc net flow (tail to head) is
    returned as a third element.
    """
    caps = np.rint(net.caps * CAPACITY_SCALE).astype(np.int64)
    rev = np.rint(net.rev_caps * CAPACITY_SCALE).astype(np.int64)
    value, side, residual = kernels.bk_maxflow(net.n_nodes, net.source, net.sink,
                                               net.tails, net.heads, caps, rev)
    cut = frozenset(np.flatnonzero(side).tolist())
    if with_flows:
        flows = (caps - residual[0::2]) / CAPACITY_SCALE
        return value / CAPACITY_SCALE, cut, flows
    return value / CAPACITY_SCALE, cut


def segment_binary(fg_cost, bg_cost, pair_a, pair_b, weights):
    """Two-label graph cut: minimise unary costs plus Potts pairwise ``weights``.

    Returns a boolean foreground array shaped like ``fg_cost``.
    """
    shape = np.shape(fg_cost)
    fg_cost = np.ravel(fg_cost)
    bg_cost = np.ravel(bg_cost)
    n = fg_cost.size
    s, t = n, n + 1
    diff = bg_cost - fg_cost  # > 0 means the pixel prefers foreground
    pix = np.arange(n)
    pos = diff > 0
    tails = np.concatenate([np.full(pos.sum(), s), pix[~pos], pair_a])
    heads = np.concatenate([pix[pos], np.full((~pos).sum(), t), pair_b])
    caps = np.concatenate([diff[pos], -diff[~pos], weights])
    rev = np.concatenate([np.zeros(n), weights])
    _, cut = max_flow(FlowNetwork(n + 2, s, t, tails, heads, caps, rev))
    fg = np.zeros(n + 2, dtype=bool)
    fg[list(cut)] = True
    return fg[:n].reshape(shape)


@dataclass
class RefineParams:
    smoothness: float = 0.5
    temporal: float = 0.3
    prior_blend: float = 0.3
    clusters: int = 8
    prior_scale: float = 2.0  # px; softness of the mask-distance prior
    band: int = 2  # px trimmed from both sides of the mask boundary before colour sampling
    min_variance: float = 4.0  # Lab^2 floor per mixture component
    max_samples: int = 4000
    seed: int = 0


@dataclass
class SegmentationResult:
    """``masks[video_id]`` is a ``(C, T, H, W)`` boolean array."""
    masks: dict = field(default_factory=dict)

    def object_mask(self, video_id, obj, t):
        return self.masks[video_id][obj, t]


def _sample(rng, pts, n):
    if len(pts) <= n:
        return pts
    return pts[np.sort(rng.choice(len(pts), n, replace=False))]


def _codebook(rng, pts, params):
    """k-means codebook as an isotropic mixture: ``(centers, log_weights, variances)``."""
    sample = _sample(rng, pts, params.max_samples)
    centers, assign = kmeans(sample, params.clusters, seed=params.seed)
    k = len(centers)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    sq = ((sample - centers[assign]) ** 2).sum(1)
    var = np.bincount(assign, weights=sq, minlength=k) / np.maximum(3.0 * counts, 1.0)
    var = np.maximum(var, params.min_variance)
    return centers, np.log(np.maximum(counts, 1.0) / counts.sum()), var


def _log_likelihood(lab, model):
    centers, log_w, var = model
    d2 = ((lab[..., None, :] - centers) ** 2).sum(-1)
    terms = log_w - 1.5 * np.log(2.0 * np.pi * var) - d2 / (2.0 * var)
    top = terms.max(-1)
    return top + np.log(np.exp(terms - top[..., None]).sum(-1))


def foreground_probability(lab, masks, params):
    """Per-pixel foreground probability for one object over the whole video.

    ``masks`` holds one boolean mask per frame or ``None`` for gap frames.
    Colour models come from pixels at least ``band`` px inside / outside
    the masks; frames with a mask blend in a soft distance-to-mask prior.
    """
    rng = np.random.default_rng(params.seed)
    have = [t for t, m in enumerate(masks) if m is not None]
    inner = []
    for t in have:
        core = ndimage.binary_erosion(masks[t], iterations=params.band)
        inner.append(lab[t][core if core.any() else masks[t]])
    fg_px = np.concatenate(inner) if inner else np.zeros((0, 3))
    bg_px = np.concatenate([lab[t][~ndimage.binary_dilation(masks[t], iterations=params.band)]
                            for t in have]) if have else np.zeros((0, 3))
    if len(fg_px) == 0:
        return np.zeros(lab.shape[:3])
    if len(bg_px):
        diff = _log_likelihood(lab, _codebook(rng, fg_px, params)) - \
            _log_likelihood(lab, _codebook(rng, bg_px, params))
        p_color = 1.0 / (1.0 + np.exp(-np.clip(diff, -50.0, 50.0)))
    else:
        p_color = np.ones(lab.shape[:3])
    prob = p_color.copy()
    w = params.prior_blend
    for t in have:
        m = masks[t]
        sd = ndimage.distance_transform_edt(m) - ndimage.distance_transform_edt(~m)
        prior = 1.0 / (1.0 + np.exp(-sd / params.prior_scale))
        prob[t] = (1.0 - w) * p_color[t] + w * prior
    return prob


def _video_edges(lab, flows, params):
    t_n, h, w = lab.shape[:3]
    a, b = grid_edges(h, w)
    per = h * w
    diffs = [((lab[t].reshape(-1, 3)[a] - lab[t].reshape(-1, 3)[b]) ** 2).sum(1) for t in range(t_n)]
    beta = float(np.mean(np.concatenate(diffs))) or 1.0
    tails, heads, weights = [], [], []
    for t in range(t_n):
        tails.append(a + t * per)
        heads.append(b + t * per)
        weights.append(params.smoothness * np.exp(-diffs[t] / (2.0 * beta)))
    if params.temporal > 0:
        yy, xx = np.mgrid[0:h, 0:w]
        for t in range(t_n - 1):
            ty = np.rint(yy + flows[t][..., 1]).astype(np.int64)
            tx = np.rint(xx + flows[t][..., 0]).astype(np.int64)
            ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
            src = (yy * w + xx)[ok] + t * per
            dst = (ty * w + tx)[ok] + (t + 1) * per
            tails.append(src)
            heads.append(dst)
            weights.append(np.full(len(src), params.temporal))
    return np.concatenate(tails), np.concatenate(heads), np.concatenate(weights)


def refine_streams(video, flows, selected, saliency=None, params=None):
    """Refine each selected stream into per-frame masks with one video-wide graph cut.

    ``flows`` are the per-frame fields (frame t to t+1).  ``saliency`` is
    accepted for interface symmetry and not used in the energy.  Returns a
    ``(C, T, H, W)`` boolean array with disjoint objects per frame.
    """
    params = params or RefineParams()
    lab = rgb_to_lab(video.frames)
    t_n, h, w = video.n_frames, video.height, video.width
    out = np.zeros((len(selected), t_n, h, w), dtype=bool)
    if not selected:
        return out
    probs = np.zeros_like(out, dtype=np.float64)
    edges = _video_edges(lab, flows, params)
    for c, stream in enumerate(selected):
        if stream.video_id != video.id:
            raise RefineError(f"stream of video {stream.video_id!r} passed for {video.id!r}")
        masks = [None] * t_n
        for t, p in stream.entries.items():
            masks[t] = p.mask
        p = np.clip(foreground_probability(lab, masks, params), _P_CLIP, 1.0 - _P_CLIP)
        probs[c] = p
        out[c] = segment_binary(-np.log(p), -np.log1p(-p), *edges)
    if len(selected) > 1:
        # overlap goes to the object with the higher foreground probability
        score = np.where(out, probs, -np.inf)
        winner = np.argmax(score, axis=0)
        out &= winner[None] == np.arange(len(selected))[:, None, None, None]
    return out
