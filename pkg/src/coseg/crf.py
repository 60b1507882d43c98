"""Stream-selection CRF: model construction, energy, exhaustive oracle and TRW-S."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import chi_squared_matrix, saliency_score

EPS_P = 1e-6
E_BIG = 1e4
INTRA, INTER = "intra", "inter"
BRUTE_FORCE_LIMIT = 10 ** 7


class CrfError(ValueError):
    pass


@dataclass
class CrfEdge:
    a: int
    b: int
    kind: str
    table: np.ndarray  # (states of a, states of b)


@dataclass
class CrfModel:
    nodes: list  # (video_id, slot)
    unary: list  # one 1-D array per node
    edges: list
    alpha1: float = 0.5
    alpha2: float = 1.0
    states: list = None  # optional per-node stream references
    mm: float = 1.0  # distance normaliser used when the tables were built

    def __post_init__(self):
        self.unary = [np.asarray(u, dtype=np.float64) for u in self.unary]
        if len(self.unary) != len(self.nodes):
            raise CrfError("one unary table per node required")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise CrfError("alphas must be non-negative")
        for u in self.unary:
            if u.ndim != 1 or len(u) == 0 or not np.all(np.isfinite(u)):
                raise CrfError("unary tables must be non-empty and finite")
        for e in self.edges:
            e.table = np.asarray(e.table, dtype=np.float64)
            if not (0 <= e.a < len(self.nodes) and 0 <= e.b < len(self.nodes)) or e.a == e.b:
                raise CrfError(f"bad edge endpoints ({e.a}, {e.b})")
            if e.table.shape != (len(self.unary[e.a]), len(self.unary[e.b])):
                raise CrfError(f"edge ({e.a}, {e.b}) table shape {e.table.shape} mismatch")
            if not np.all(np.isfinite(e.table)):
                raise CrfError("pairwise tables must be finite")
            same_video = self.nodes[e.a][0] == self.nodes[e.b][0]
            if e.kind == INTRA and not same_video:
                raise CrfError("intra edge between different videos")
            if e.kind == INTER and same_video:
                raise CrfError("inter edge inside one video")
            if e.kind not in (INTRA, INTER):
                raise CrfError(f"unknown edge kind {e.kind!r}")

    @property
    def n_states(self):
        return [len(u) for u in self.unary]

    def weight(self, edge):
        return self.alpha1 if edge.kind == INTRA else self.alpha2


@dataclass(frozen=True)
class Labeling:
    states: tuple
    energy: float


def evaluate_energy(model, assignment):
    """Unaries plus alpha-weighted intra and inter pairwise terms."""
    x = [int(v) for v in assignment]
    if len(x) != len(model.nodes):
        raise CrfError("assignment length differs from node count")
    for i, v in enumerate(x):
        if not 0 <= v < len(model.unary[i]):
            raise CrfError(f"state {v} out of range at node {i}")
    e = sum(float(model.unary[i][v]) for i, v in enumerate(x))
    for ed in model.edges:
        e += model.weight(ed) * float(ed.table[x[ed.a], x[ed.b]])
    return e


def solve_brute_force(model):
    """Global minimum by enumeration; ties go to the lexicographically smallest assignment."""
    sizes = model.n_states
    total = int(np.prod(sizes, dtype=np.float64))
    if total > BRUTE_FORCE_LIMIT:
        raise CrfError(f"{total} assignments exceed the enumeration limit")
    n = len(sizes)
    energy = np.zeros(sizes)
    for i, u in enumerate(model.unary):
        shape = [1] * n
        shape[i] = sizes[i]
        energy = energy + u.reshape(shape)
    for ed in model.edges:
        shape = [1] * n
        t = model.weight(ed) * ed.table
        if ed.a < ed.b:
            shape[ed.a], shape[ed.b] = sizes[ed.a], sizes[ed.b]
            energy = energy + t.reshape(shape)
        else:
            shape[ed.b], shape[ed.a] = sizes[ed.b], sizes[ed.a]
            energy = energy + t.T.reshape(shape)
    flat = int(np.argmin(energy))  # C order == lexicographic order; first minimum wins
    x = tuple(int(v) for v in np.unravel_index(flat, sizes))
    return Labeling(x, evaluate_energy(model, x))


# ---------------------------------------------------------------- TRW-S

def _chains(n, edges):
    """Monotonic chains covering every edge once (endpoints ordered a < b).

    Node ``s`` lies on ``max(in_s, out_s)`` chains (one if isolated).
    """
    incoming = [[] for _ in range(n)]
    outgoing = [[] for _ in range(n)]
    for k, (a, b) in enumerate(edges):
        incoming[b].append(k)
        outgoing[a].append(k)
    chain_of = {}
    chains = []
    for s in range(n):
        if not incoming[s] and not outgoing[s]:
            chains.append([s])
        for i, k in enumerate(outgoing[s]):
            if i < len(incoming[s]):
                c = chain_of[incoming[s][i]]
            else:
                c = len(chains)
                chains.append([s])
            chain_of[k] = c
            chains[c].append(k)
    # chains hold: start node, then edge ids along the path
    return chains


@dataclass
class TrwsResult:
    labeling: Labeling
    lower_bound: float
    bounds: list = field(default_factory=list)  # bound after each iteration
    iterations: int = 0


def solve_trws(model, max_iters=500, tol=1e-6, detail=False):
    """Sequential tree-reweighted message passing.

    Returns ``(Labeling, lower_bound)`` (or a :class:`TrwsResult` with
    ``detail``).  The bound is evaluated on a fixed monotonic-chain
    decomposition of the reparametrised energy after each forward+backward
    iteration; the best decoded labeling seen is kept.
    """
    if max_iters < 1:
        raise CrfError("max_iters must be at least 1")
    n = len(model.nodes)
    theta = [u.copy() for u in model.unary]
    # orient every edge from lower to higher node index
    ends, pair = [], []
    for ed in model.edges:
        t = model.weight(ed) * ed.table
        if ed.a < ed.b:
            ends.append((ed.a, ed.b))
            pair.append(t)
        else:
            ends.append((ed.b, ed.a))
            pair.append(t.T.copy())
    nbr = [[] for _ in range(n)]  # (edge id, other node, node is the lower end)
    for k, (a, b) in enumerate(ends):
        nbr[a].append((k, b, True))
        nbr[b].append((k, a, False))
    n_in = [sum(1 for _, _, low in nbr[s] if not low) for s in range(n)]
    n_out = [sum(1 for _, _, low in nbr[s] if low) for s in range(n)]
    weight = [1.0 / max(n_in[s], n_out[s], 1) for s in range(n)]
    # msg_up[k] lives on the upper node (sent a -> b); msg_down[k] on the lower node
    msg_up = [np.zeros(len(theta[b])) for a, b in ends]
    msg_down = [np.zeros(len(theta[a])) for a, b in ends]
    chains = _chains(n, ends)

    def belief(s):
        h = theta[s].copy()
        for k, _, low in nbr[s]:
            h += msg_down[k] if low else msg_up[k]
        return h

    def bound():
        total = 0.0
        for ch in chains:
            s = ch[0]
            dp = belief(s) * weight[s]
            for k in ch[1:]:
                a, b = ends[k]
                rep = pair[k] - msg_down[k][:, None] - msg_up[k][None, :]
                dp = (dp[:, None] + rep).min(0) + belief(b) * weight[b]
            total += float(dp.min())
        return total

    def decode(forward):
        """Greedy assignment in pass order: fixed neighbours via the table, the rest via messages."""
        x = [0] * n
        done = [False] * n
        for s in (range(n) if forward else range(n - 1, -1, -1)):
            h = theta[s].copy()
            for k, o, low in nbr[s]:
                if done[o]:
                    h += pair[k][:, x[o]] if low else pair[k][x[o], :]
                else:
                    h += msg_down[k] if low else msg_up[k]
            x[s] = int(np.argmin(h))
            done[s] = True
        return tuple(x)

    best = None
    bounds = []
    it = 0
    for it in range(1, max_iters + 1):
        for order, send_up in ((range(n), True), (range(n - 1, -1, -1), False)):
            for s in order:
                h = belief(s) * weight[s]
                for k, o, low in nbr[s]:
                    if send_up and low:
                        msg = (h - msg_down[k])[:, None] + pair[k]
                        new = msg.min(0)
                        msg_up[k] = new - new.min()
                    elif not send_up and not low:
                        msg = (h - msg_up[k])[None, :] + pair[k]
                        new = msg.min(1)
                        msg_down[k] = new - new.min()
            x = decode(not send_up)
            e = evaluate_energy(model, x)
            if best is None or e < best.energy - 1e-12:
                best = Labeling(x, e)
        lb = bound()
        improvement = lb - bounds[-1] if bounds else np.inf
        bounds.append(lb)
        if best.energy - lb <= tol * max(1.0, abs(best.energy)):
            break
        if improvement < tol:
            break
    res = TrwsResult(best, bounds[-1], bounds, it)
    return res if detail else (res.labeling, res.lower_bound)


# ---------------------------------------------------------------- model construction

def _entry_features(stream):
    props = list(stream.entries.values())
    return (np.array([p.feature.color for p in props]), np.array([p.feature.shape for p in props]))


def _budget_indices(n, m):
    if n <= m:
        return np.arange(n)
    return np.unique(np.rint(np.linspace(0, n - 1, m)).astype(np.int64))


def raw_stream_distance(f1, f2, color_weight=2.0, pair_budget=400):
    """Mean feature distance over entry pairs of two streams (before the M_m scaling).

    ``f1``/``f2`` are ``(colors, shapes)`` entry-feature stacks.  Above the
    pair budget each side is thinned to evenly spaced entries.
    """
    c1, s1 = f1
    c2, s2 = f2
    if len(c1) * len(c2) > pair_budget:
        per_side = max(1, int(np.sqrt(pair_budget)))
        i1, i2 = _budget_indices(len(c1), per_side), _budget_indices(len(c2), per_side)
        c1, s1, c2, s2 = c1[i1], s1[i1], c2[i2], s2[i2]
    d = (color_weight * chi_squared_matrix(c1, c2) + chi_squared_matrix(s1, s2)) / (color_weight + 1.0)
    return float(d.mean())


def stream_distance(s1, s2, color_weight, mm, pair_budget=400):
    """Normalised stream dissimilarity: mean entry-pair feature distance over ``mm``."""
    if mm <= 0:
        raise CrfError("M_m must be positive")
    a = raw_stream_distance(_entry_features(s1), _entry_features(s2), color_weight, pair_budget)
    b = raw_stream_distance(_entry_features(s2), _entry_features(s1), color_weight, pair_budget)
    return 0.5 * (a + b) / mm


def stream_saliency(stream, saliency):
    return float(np.mean([saliency_score(saliency, t, p.mask) for t, p in stream.entries.items()]))


def build_crf(stream_sets, saliency, slot_counts, alpha1=0.5, alpha2=1.0, color_weight=2.0,
              pair_budget=400, eps=EPS_P, e_big=E_BIG):
    """Multi-video, multi-object stream-selection model.

    Nodes are ``(video, slot)``; each node's states are its video's streams.
    Every slot pair inside a video gets one intra edge and every slot pair
    across two videos one inter edge.
    """
    if len(stream_sets) != len(saliency) or len(stream_sets) != len(slot_counts):
        raise CrfError("stream sets, saliency maps and slot counts must align")
    for ss, c in zip(stream_sets, slot_counts):
        if len(ss.streams) == 0:
            raise CrfError(f"video {ss.video_id!r} has no streams")
        if c < 1:
            raise CrfError("slot counts must be at least 1")
    top = max(s.mean_combined for ss in stream_sets for s in ss.streams)
    unaries = []
    for ss, sal in zip(stream_sets, saliency):
        a_bar = np.array([s.mean_combined for s in ss.streams]) / top if top > 0 else \
            np.zeros(len(ss.streams))
        sv = np.array([stream_saliency(s, sal) for s in ss.streams])
        unaries.append(-np.log(np.clip(np.maximum(a_bar, sv), eps, 1.0)))

    feats = [[_entry_features(s) for s in ss.streams] for ss in stream_sets]

    def raw_table(i, j):
        fi, fj = feats[i], feats[j]
        out = np.empty((len(fi), len(fj)))
        for a in range(len(fi)):
            for b in range(len(fj)):
                if i == j and b < a:
                    out[a, b] = out[b, a]
                else:
                    out[a, b] = 0.5 * (raw_stream_distance(fi[a], fj[b], color_weight, pair_budget)
                                       + raw_stream_distance(fj[b], fi[a], color_weight, pair_budget))
        return out

    nodes = [(ss.video_id, k) for ss, c in zip(stream_sets, slot_counts) for k in range(c)]
    node_video = [i for i, c in enumerate(slot_counts) for _ in range(c)]
    raw = {}
    nv = len(stream_sets)
    for i in range(nv):
        if slot_counts[i] > 1:
            raw[i, i] = raw_table(i, i)
        for j in range(i + 1, nv):
            raw[i, j] = raw_table(i, j)
    values = np.concatenate([t.ravel() for t in raw.values()]) if raw else np.zeros(0)
    mm = float(values.mean()) if len(values) else 1.0
    if mm <= 0:
        mm = 1.0

    edges = []
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            i, j = node_video[a], node_video[b]
            d = raw[i, j] / mm
            if i == j:
                t = -np.log(np.clip(d, eps, None))
                t = t + e_big * np.eye(len(d))
                edges.append(CrfEdge(a, b, INTRA, t))
            else:
                edges.append(CrfEdge(a, b, INTER, d))
    node_unary = [unaries[node_video[a]] for a in range(len(nodes))]
    states = [stream_sets[node_video[a]].streams for a in range(len(nodes))]
    return CrfModel(nodes, node_unary, edges, alpha1, alpha2, states, mm)


# ---------------------------------------------------------------- text format

def dump_model(model, path):
    """Plain-text model: header, unary blocks, then edge blocks with full tables."""
    lines = ["crf-model 1", f"nodes {len(model.nodes)}",
             f"alphas {model.alpha1!r} {model.alpha2!r}"]
    for i, ((vid, slot), u) in enumerate(zip(model.nodes, model.unary)):
        lines.append(f"node {i} {vid} {slot} {len(u)}")
        lines.append(" ".join(repr(float(v)) for v in u))
    lines.append(f"edges {len(model.edges)}")
    for ed in model.edges:
        lines.append(f"edge {ed.a} {ed.b} {ed.kind} {ed.table.shape[0]} {ed.table.shape[1]}")
        for row in ed.table:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    try:
        tokens = iter(Path(path).read_text().split("\n"))
        if next(tokens).strip() != "crf-model 1":
            raise CrfError("not a crf-model file")
        n = int(next(tokens).split()[1])
        _, a1, a2 = next(tokens).split()
        nodes, unary = [], []
        for _ in range(n):
            _, _, vid, slot, k = next(tokens).split()
            nodes.append((vid, int(slot)))
            unary.append(np.array([float(v) for v in next(tokens).split()]))
            if len(unary[-1]) != int(k):
                raise CrfError("unary length mismatch")
        n_edges = int(next(tokens).split()[1])
        edges = []
        for _ in range(n_edges):
            _, a, b, kind, r, c = next(tokens).split()
            rows = [[float(v) for v in next(tokens).split()] for _ in range(int(r))]
            t = np.array(rows).reshape(int(r), int(c))
            edges.append(CrfEdge(int(a), int(b), kind, t))
    except (StopIteration, ValueError) as exc:
        if isinstance(exc, CrfError):
            raise
        raise CrfError(f"malformed model file {path}: {exc}") from exc
    return CrfModel(nodes, unary, edges, float(a1), float(a2))


def random_model(rng, n_videos, slots, n_states, kind="tree", scale=1.0):
    """Random test model (used by tests and the benchmark)."""
    nodes = [(f"v{i}", k) for i in range(n_videos) for k in range(slots)]
    n = len(nodes)
    sizes = [int(n_states)] * n if np.isscalar(n_states) else list(n_states)
    unary = [rng.random(s) * scale for s in sizes]
    if kind == "tree":
        pairs = [(int(rng.integers(0, b)), b) for b in range(1, n)]
    else:
        pairs = list(itertools.combinations(range(n), 2))
    edges = []
    for a, b in pairs:
        k = INTRA if nodes[a][0] == nodes[b][0] else INTER
        edges.append(CrfEdge(a, b, k, rng.random((sizes[a], sizes[b])) * scale))
    return CrfModel(nodes, unary, edges, 0.5, 1.0)
