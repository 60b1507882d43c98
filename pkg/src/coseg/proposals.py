"""Ranked object proposals per frame and their objectness + motion scores."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .features import (chi_squared, color_bins, color_histogram,
                       flow_histogram, gray_gradients, region_feature)
from .tcs import labels_of_mask
from .vidcore import rgb_to_lab

MIN_AREA_FRACTION = 0.001
MAX_AREA_FRACTION = 0.90
GENERATED, PREDICTED = "generated", "predicted"


class ProposalError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Proposal:
    video_id: str
    frame: int
    mask: np.ndarray
    tcs_labels: frozenset
    objectness: float
    motion: float = 0.0
    combined: float = 0.0
    rank: int = 0
    origin: str = GENERATED
    feature: object = field(default=None, repr=False)

    def __post_init__(self):
        self.mask.flags.writeable = False

    @property
    def area(self):
        return int(self.mask.sum())


def area_ok(mask):
    frac = mask.sum() / mask.size
    return MIN_AREA_FRACTION <= frac <= MAX_AREA_FRACTION


@dataclass
class ProposalParams:
    thresholds: tuple = (4.0, 8.0, 16.0, 28.0)  # Lab distances for region growing
    ring_width: int = 4
    boundary_weight: float = 0.5
    contrast_weight: float = 0.5
    dedup_iou: float = 0.95


def _superpixel_graph(labels, lab):
    ids, inv = np.unique(labels, return_inverse=True)
    inv = inv.reshape(labels.shape)
    n = len(ids)
    cnt = np.bincount(inv.ravel(), minlength=n)
    mean = np.stack([np.bincount(inv.ravel(), weights=lab[..., c].ravel(), minlength=n) / cnt
                     for c in range(3)], axis=1)
    pairs = np.concatenate([
        np.stack([inv[:, :-1].ravel(), inv[:, 1:].ravel()], 1),
        np.stack([inv[:-1, :].ravel(), inv[1:, :].ravel()], 1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, 1), axis=0)
    adj = [[] for _ in range(n)]
    for a, b in pairs:
        adj[a].append(int(b))
        adj[b].append(int(a))
    return ids, inv, cnt, mean, adj


def _grow(seed_nodes, adj, mean, cnt, tau):
    """Flood over adjacent superpixels whose colour is within ``tau`` of the running mean."""
    region = set(seed_nodes)
    total = cnt[list(region)].sum()
    acc = (mean[list(region)] * cnt[list(region), None]).sum(0)
    frontier = sorted({j for i in region for j in adj[i]} - region)
    while frontier:
        cur = acc / total
        nxt = []
        for j in frontier:
            if j in region:
                continue
            if np.linalg.norm(mean[j] - cur) <= tau:
                region.add(j)
                total += cnt[j]
                acc = acc + mean[j] * cnt[j]
                nxt.extend(k for k in adj[j] if k not in region)
        frontier = sorted(set(nxt) - region)
    return frozenset(region)


def _merged_groups(adj, mean, tau):
    """Connected groups of superpixels joined by edges with colour distance below ``tau``."""
    n = len(adj)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in adj[i]:
            if j > i and np.linalg.norm(mean[i] - mean[j]) <= tau:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [g for g in groups.values() if len(g) > 1]


def objectness(mask, bins, ring_width, boundary_weight=0.5, contrast_weight=0.5, frame=None):
    """Boundary-avoidance plus colour contrast against a surrounding ring, in [0, 1]."""
    pad = np.pad(mask, 1)
    inner = pad[1:-1, 1:-1]
    edges = 0
    for sl in ((slice(0, -2), slice(1, -1)), (slice(2, None), slice(1, -1)),
               (slice(1, -1), slice(0, -2)), (slice(1, -1), slice(2, None))):
        e = inner & ~pad[sl]
        edges += e.sum()
    border = mask[0, :].sum() + mask[-1, :].sum() + mask[:, 0].sum() + mask[:, -1].sum()
    contact = border / edges if edges else 1.0
    ring = ndimage.binary_dilation(mask, iterations=ring_width) & ~mask
    contrast = chi_squared(color_histogram(frame, mask, bins), color_histogram(frame, ring, bins)) if ring.any() else 0.0
    return boundary_weight * (1.0 - contact) + contrast_weight * contrast


def generate_proposals(frame, spm, t, max_count, video_id="", params=None):
    """Ranked proposals for frame ``t`` built by superpixel agglomeration."""
    if max_count < 1:
        raise ProposalError("max_count must be at least 1")
    params = params or ProposalParams()
    labels = spm.labels[t]
    lab = rgb_to_lab(frame)
    ids, inv, cnt, mean, adj = _superpixel_graph(labels, lab)
    n = len(ids)

    seeds = [(i,) for i in range(n)]
    for tau in params.thresholds:
        seeds.extend(tuple(g) for g in _merged_groups(adj, mean, tau))
    regions = []
    seen = set()
    for tau in params.thresholds:
        for s in seeds:
            r = _grow(s, adj, mean, cnt, tau)
            if r not in seen:
                seen.add(r)
                regions.append(r)

    total = labels.size
    bins = color_bins(frame)
    grads = gray_gradients(frame)
    cands = []
    for r in regions:
        area = cnt[list(r)].sum()
        if not (MIN_AREA_FRACTION * total <= area <= MAX_AREA_FRACTION * total):
            continue
        member = np.zeros(n, dtype=bool)
        member[list(r)] = True
        mask = member[inv]
        score = objectness(mask, bins, params.ring_width, params.boundary_weight,
                           params.contrast_weight, frame)
        cands.append((score, area, sorted(r), mask))
    # best first; ties to the smaller region, then to lower superpixel indices
    cands.sort(key=lambda c: (-c[0], c[1], c[2]))

    kept = []
    kept_masks = []
    for score, area, _, mask in cands:
        if kept_masks:
            stack = np.stack(kept_masks)
            inter = (stack & mask).sum((1, 2))
            union = (stack | mask).sum((1, 2))
            if np.any(inter / union > params.dedup_iou):
                continue
        kept.append((score, mask))
        kept_masks.append(mask)
        if len(kept) >= max_count:
            break
    out = []
    for rank, (score, mask) in enumerate(kept):
        out.append(Proposal(video_id, t, mask, labels_of_mask(spm, t, mask), float(score),
                            0.0, float(score), rank, GENERATED,
                            region_feature(frame, mask, bins, grads)))
    return out


def surround_mask(mask, dilation=0.2):
    """Loose bounding box (grown by ``dilation`` per side) minus the region."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    dy = int(math.ceil(dilation * (y1 - y0)))
    dx = int(math.ceil(dilation * (x1 - x0)))
    box = np.zeros_like(mask)
    box[max(y0 - dy, 0):min(y1 + dy, h), max(x0 - dx, 0):min(x1 + dx, w)] = True
    return box & ~mask


def motion_chi2(mask, flow, dilation=0.2):
    """Chi-squared distance between the region's and its surround's flow histograms."""
    sur = surround_mask(mask, dilation)
    if not sur.any():
        return None
    return chi_squared(flow_histogram(flow, mask), flow_histogram(flow, sur))


def motion_score(chi2, mean_chi2):
    """``1 - exp(-chi2 / mean_chi2)``; zero when the surround is empty or nothing moves."""
    if chi2 is None or mean_chi2 <= 0:
        return 0.0
    return 1.0 - math.exp(-chi2 / mean_chi2)


def score_proposals(per_frame, flows, dilation=0.2):
    """Attach motion and combined scores; returns ``(lists, mean_chi2)``.

    The normaliser is the mean chi-squared over every proposal of the video
    (two passes).  Each frame's list is re-ranked by combined score.
    """
    chis = [[motion_chi2(p.mask, flows[t], dilation) for p in props]
            for t, props in enumerate(per_frame)]
    valid = [c for row in chis for c in row if c is not None]
    mean_chi2 = float(np.mean(valid)) if valid else 0.0
    out = []
    for props, row in zip(per_frame, chis):
        scored = []
        for p, c in zip(props, row):
            m = motion_score(c, mean_chi2)
            scored.append(replace(p, motion=m, combined=p.objectness + m))
        out.append(rank_proposals(scored))
    return out, mean_chi2


def rank_proposals(props):
    """Sort by combined score (stable on ties) and renumber ranks from 0."""
    order = sorted(range(len(props)), key=lambda i: (-props[i].combined, i))
    return [replace(props[i], rank=r) for r, i in enumerate(order)]


def write_proposals(directory, per_frame):
    """Dump one PGM mask per proposal plus ``index.csv``."""
    import csv
    from pathlib import Path
    from .pnm import write_pgm
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "index.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "rank", "objectness", "motion", "combined", "origin", "file"])
        for props in per_frame:
            for i, p in enumerate(props):
                name = f"{p.frame:03d}_{i:04d}.pgm"
                write_pgm(directory / name, p.mask.astype(np.uint8) * 255)
                wr.writerow([p.frame, p.rank, repr(p.objectness), repr(p.motion),
                             repr(p.combined), p.origin, name])


def read_proposals(directory, video, spm):
    """Inverse of :func:`write_proposals`; features and TCS labels are recomputed."""
    import csv
    from pathlib import Path
    from .pnm import read_pnm
    directory = Path(directory)
    per_frame = [[] for _ in range(video.n_frames)]
    with open(directory / "index.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            t = int(row["frame"])
            mask = read_pnm(directory / row["file"]) > 0
            per_frame[t].append(Proposal(
                video.id, t, mask, labels_of_mask(spm, t, mask), float(row["objectness"]),
                float(row["motion"]), float(row["combined"]), int(row["rank"]), row["origin"],
                region_feature(video.frames[t], mask)))
    return per_frame

