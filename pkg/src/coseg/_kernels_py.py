"""Pure-Python implementations of the hot kernels.

These mirror ``_kernels.pyx`` line for line and are used whenever the compiled
extension is unavailable (or ``COSEG_PURE_PYTHON=1`` is set).
"""
from collections import deque

import numpy as np

_FREE, _SRC, _SNK = 0, 1, 2
_TERMINAL = -2
_ORPHAN = -1
_INF_DIST = 1 << 30


def bk_maxflow(n_nodes, source, sink, tails, heads, caps, rev_caps):
    """Boykov-Kolmogorov max-flow on integer capacities.

    Arc ``i`` of the input becomes the residual pair ``2i`` (tail->head with
    ``caps[i]``) and ``2i+1`` (head->tail with ``rev_caps[i]``).

    Returns ``(flow_value, source_side, residual)``: ``source_side`` marks
    nodes reachable from the source in the final residual graph and
    ``residual`` holds the ``2 * len(tails)`` residual capacities.
    """
    tails = [int(v) for v in tails]
    heads = [int(v) for v in heads]
    m = len(tails)
    arc_head = [0] * (2 * m)
    rcap = [0] * (2 * m)
    out = [[] for _ in range(n_nodes)]
    for i in range(m):
        u, v = tails[i], heads[i]
        arc_head[2 * i] = v
        rcap[2 * i] = int(caps[i])
        arc_head[2 * i + 1] = u
        rcap[2 * i + 1] = int(rev_caps[i])
        out[u].append(2 * i)
        out[v].append(2 * i + 1)

    tree = [_FREE] * n_nodes
    parent = [_ORPHAN] * n_nodes
    ts = [0] * n_nodes
    dist = [0] * n_nodes
    queued = [False] * n_nodes
    tree[source], tree[sink] = _SRC, _SNK
    parent[source] = parent[sink] = _TERMINAL
    dist[source] = dist[sink] = 0
    active = deque([source, sink])
    queued[source] = queued[sink] = True
    time = 1
    ts[source] = ts[sink] = time
    flow = 0

    def parent_node(x):
        e = parent[x]
        return arc_head[e ^ 1] if tree[x] == _SRC else arc_head[e]

    while active:
        p = active[0]
        if tree[p] == _FREE:
            active.popleft()
            queued[p] = False
            continue
        bridge = -1
        if tree[p] == _SRC:
            for a in out[p]:
                if rcap[a] > 0:
                    q = arc_head[a]
                    tq = tree[q]
                    if tq == _FREE:
                        tree[q] = _SRC
                        parent[q] = a
                        ts[q] = ts[p]
                        dist[q] = dist[p] + 1
                        if not queued[q]:
                            queued[q] = True
                            active.append(q)
                    elif tq == _SNK:
                        bridge = a
                        break
        else:
            for a in out[p]:
                sa = a ^ 1
                if rcap[sa] > 0:
                    q = arc_head[a]
                    tq = tree[q]
                    if tq == _FREE:
                        tree[q] = _SNK
                        parent[q] = sa
                        ts[q] = ts[p]
                        dist[q] = dist[p] + 1
                        if not queued[q]:
                            queued[q] = True
                            active.append(q)
                    elif tq == _SRC:
                        bridge = sa
                        break
        if bridge < 0:
            active.popleft()
            queued[p] = False
            continue

        # augment along source ... u -> v ... sink
        time += 1
        u = arc_head[bridge ^ 1]
        v = arc_head[bridge]
        bottleneck = rcap[bridge]
        x = u
        while parent[x] != _TERMINAL:
            e = parent[x]
            if rcap[e] < bottleneck:
                bottleneck = rcap[e]
            x = arc_head[e ^ 1]
        x = v
        while parent[x] != _TERMINAL:
            e = parent[x]
            if rcap[e] < bottleneck:
                bottleneck = rcap[e]
            x = arc_head[e]
        rcap[bridge] -= bottleneck
        rcap[bridge ^ 1] += bottleneck
        orphans = []
        x = u
        while parent[x] != _TERMINAL:
            e = parent[x]
            nxt = arc_head[e ^ 1]
            rcap[e] -= bottleneck
            rcap[e ^ 1] += bottleneck
            if rcap[e] == 0:
                parent[x] = _ORPHAN
                orphans.append(x)
            x = nxt
        x = v
        while parent[x] != _TERMINAL:
            e = parent[x]
            nxt = arc_head[e]
            rcap[e] -= bottleneck
            rcap[e ^ 1] += bottleneck
            if rcap[e] == 0:
                parent[x] = _ORPHAN
                orphans.append(x)
            x = nxt
        flow += bottleneck

        # adoption
        while orphans:
            p2 = orphans.pop()
            tp = tree[p2]
            best = -1
            dmin = _INF_DIST
            for a in out[p2]:
                q = arc_head[a]
                if tree[q] != tp:
                    continue
                cand = (a ^ 1) if tp == _SRC else a
                if rcap[cand] <= 0:
                    continue
                # walk to the root; stop early at nodes verified this round
                d = 0
                y = q
                while True:
                    if ts[y] == time:
                        d += dist[y]
                        break
                    e = parent[y]
                    d += 1
                    if e == _TERMINAL:
                        ts[y] = time
                        dist[y] = 1
                        break
                    if e == _ORPHAN:
                        d = _INF_DIST
                        break
                    y = parent_node(y)
                if d < _INF_DIST:
                    if d < dmin:
                        best = cand
                        dmin = d
                    y = q
                    while ts[y] != time:
                        ts[y] = time
                        dist[y] = d
                        d -= 1
                        y = parent_node(y)
            if best >= 0:
                parent[p2] = best
                ts[p2] = time
                dist[p2] = dmin + 1
                continue
            for a in out[p2]:
                q = arc_head[a]
                if tree[q] != tp:
                    continue
                cand = (a ^ 1) if tp == _SRC else a
                if rcap[cand] > 0 and not queued[q]:
                    queued[q] = True
                    active.append(q)
                e = parent[q]
                if e >= 0 and parent_node(q) == p2:
                    parent[q] = _ORPHAN
                    orphans.append(q)
            tree[p2] = _FREE

    side = np.fromiter((t == _SRC for t in tree), dtype=bool, count=n_nodes)
    return flow, side, np.array(rcap, dtype=np.int64)


def slic_assign(lab, centers, step, compactness, active, labels):
    """Local k-means assignment step of SLIC.

    ``centers`` rows are ``(L, a, b, y, x)``; each center competes for active
    pixels inside a ``2*step`` window.  ``labels`` is updated in place for
    active pixels reached by some center; returns the per-pixel squared
    distance (``inf`` where no center reached).
    """
    h, w = labels.shape
    best = np.full((h, w), np.inf)
    ratio = (compactness / step) ** 2
    for k in range(centers.shape[0]):
        cl, ca, cb, cy, cx = centers[k]
        if not np.isfinite(cy):
            continue
        y0 = max(int(cy - step), 0)
        y1 = min(int(cy + step) + 1, h)
        x0 = max(int(cx - step), 0)
        x1 = min(int(cx + step) + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        win = lab[y0:y1, x0:x1]
        dc = (win[..., 0] - cl) ** 2 + (win[..., 1] - ca) ** 2 + (win[..., 2] - cb) ** 2
        yy = np.arange(y0, y1)[:, None] - cy
        xx = np.arange(x0, x1)[None, :] - cx
        d = dc + (yy * yy + xx * xx) * ratio
        sub = best[y0:y1, x0:x1]
        upd = (d < sub) & active[y0:y1, x0:x1]
        sub[upd] = d[upd]
        labels[y0:y1, x0:x1][upd] = k
    return best
