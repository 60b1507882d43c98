# cython: language_level=3
"""Compiled hot kernels: Boykov-Kolmogorov max-flow and the SLIC assignment step.

Behaviour is identical to ``_kernels_py``; only the speed differs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, isfinite

cnp.import_array()

ctypedef long long i64

cdef enum:
    FREE = 0
    SRC = 1
    SNK = 2

cdef int TERMINAL = -2
cdef int ORPHAN = -1
cdef int INF_DIST = 1 << 30


def bk_maxflow(int n_nodes, int source, int sink, tails, heads, caps, rev_caps):
    cdef cnp.int64_t[::1] t_arr = np.ascontiguousarray(tails, dtype=np.int64)
    cdef cnp.int64_t[::1] h_arr = np.ascontiguousarray(heads, dtype=np.int64)
    cdef cnp.int64_t[::1] c_arr = np.ascontiguousarray(caps, dtype=np.int64)
    cdef cnp.int64_t[::1] r_arr = np.ascontiguousarray(rev_caps, dtype=np.int64)
    cdef Py_ssize_t m = t_arr.shape[0]
    cdef Py_ssize_t i, k

    # CSR layout of residual arcs, grouped by tail, preserving insertion order
    cdef cnp.int64_t[::1] arc_head = np.empty(2 * m, dtype=np.int64)
    cdef cnp.int64_t[::1] rcap = np.empty(2 * m, dtype=np.int64)
    cdef cnp.int64_t[::1] deg = np.zeros(n_nodes + 1, dtype=np.int64)
    for i in range(m):
        arc_head[2 * i] = h_arr[i]
        rcap[2 * i] = c_arr[i]
        arc_head[2 * i + 1] = t_arr[i]
        rcap[2 * i + 1] = r_arr[i]
        deg[t_arr[i] + 1] += 1
        deg[h_arr[i] + 1] += 1
    for i in range(n_nodes):
        deg[i + 1] += deg[i]
    cdef cnp.int64_t[::1] start = np.array(deg, copy=True)
    cdef cnp.int64_t[::1] fill = np.array(deg, copy=True)
    cdef cnp.int64_t[::1] adj = np.empty(2 * m, dtype=np.int64)
    for i in range(m):
        adj[fill[t_arr[i]]] = 2 * i
        fill[t_arr[i]] += 1
        adj[fill[h_arr[i]]] = 2 * i + 1
        fill[h_arr[i]] += 1

    cdef cnp.int8_t[::1] tree = np.zeros(n_nodes, dtype=np.int8)
    cdef cnp.int64_t[::1] parent = np.full(n_nodes, ORPHAN, dtype=np.int64)
    cdef cnp.int64_t[::1] ts = np.zeros(n_nodes, dtype=np.int64)
    cdef cnp.int64_t[::1] dist = np.zeros(n_nodes, dtype=np.int64)
    cdef cnp.int8_t[::1] queued = np.zeros(n_nodes, dtype=np.int8)
    cdef cnp.int64_t[::1] queue = np.empty(n_nodes + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] orphans = np.empty(n_nodes + 1, dtype=np.int64)
    cdef Py_ssize_t qhead = 0, qtail = 0, qcap = n_nodes + 1, n_orph = 0

    cdef i64 flow = 0, bottleneck, time = 1
    cdef i64 a, sa, e, cand, best, nxt
    cdef i64 p, q, x, y, u, v, p2, d, dmin
    cdef int tq, tp
    cdef i64 bridge

    tree[source] = SRC
    tree[sink] = SNK
    parent[source] = TERMINAL
    parent[sink] = TERMINAL
    ts[source] = time
    ts[sink] = time
    queue[qtail] = source
    qtail = (qtail + 1) % qcap
    queue[qtail] = sink
    qtail = (qtail + 1) % qcap
    queued[source] = 1
    queued[sink] = 1

    with nogil:
        while qhead != qtail:
            p = queue[qhead]
            if tree[p] == FREE:
                qhead = (qhead + 1) % qcap
                queued[p] = 0
                continue
            bridge = -1
            if tree[p] == SRC:
                for k in range(start[p], start[p + 1]):
                    a = adj[k]
                    if rcap[a] > 0:
                        q = arc_head[a]
                        tq = tree[q]
                        if tq == FREE:
                            tree[q] = SRC
                            parent[q] = a
                            ts[q] = ts[p]
                            dist[q] = dist[p] + 1
                            if not queued[q]:
                                queued[q] = 1
                                queue[qtail] = q
                                qtail = (qtail + 1) % qcap
                        elif tq == SNK:
                            bridge = a
                            break
            else:
                for k in range(start[p], start[p + 1]):
                    a = adj[k]
                    sa = a ^ 1
                    if rcap[sa] > 0:
                        q = arc_head[a]
                        tq = tree[q]
                        if tq == FREE:
                            tree[q] = SNK
                            parent[q] = sa
                            ts[q] = ts[p]
                            dist[q] = dist[p] + 1
                            if not queued[q]:
                                queued[q] = 1
                                queue[qtail] = q
                                qtail = (qtail + 1) % qcap
                        elif tq == SRC:
                            bridge = sa
                            break
            if bridge < 0:
                qhead = (qhead + 1) % qcap
                queued[p] = 0
                continue

            time += 1
            u = arc_head[bridge ^ 1]
            v = arc_head[bridge]
            bottleneck = rcap[bridge]
            x = u
            while parent[x] != TERMINAL:
                e = parent[x]
                if rcap[e] < bottleneck:
                    bottleneck = rcap[e]
                x = arc_head[e ^ 1]
            x = v
            while parent[x] != TERMINAL:
                e = parent[x]
                if rcap[e] < bottleneck:
                    bottleneck = rcap[e]
                x = arc_head[e]
            rcap[bridge] -= bottleneck
            rcap[bridge ^ 1] += bottleneck
            n_orph = 0
            x = u
            while parent[x] != TERMINAL:
                e = parent[x]
                nxt = arc_head[e ^ 1]
                rcap[e] -= bottleneck
                rcap[e ^ 1] += bottleneck
                if rcap[e] == 0:
                    parent[x] = ORPHAN
                    orphans[n_orph] = x
                    n_orph += 1
                x = nxt
            x = v
            while parent[x] != TERMINAL:
                e = parent[x]
                nxt = arc_head[e]
                rcap[e] -= bottleneck
                rcap[e ^ 1] += bottleneck
                if rcap[e] == 0:
                    parent[x] = ORPHAN
                    orphans[n_orph] = x
                    n_orph += 1
                x = nxt
            flow += bottleneck

            while n_orph > 0:
                n_orph -= 1
                p2 = orphans[n_orph]
                tp = tree[p2]
                best = -1
                dmin = INF_DIST
                for k in range(start[p2], start[p2 + 1]):
                    a = adj[k]
                    q = arc_head[a]
                    if tree[q] != tp:
                        continue
                    if tp == SRC:
                        cand = a ^ 1
                    else:
                        cand = a
                    if rcap[cand] <= 0:
                        continue
                    d = 0
                    y = q
                    while True:
                        if ts[y] == time:
                            d += dist[y]
                            break
                        e = parent[y]
                        d += 1
                        if e == TERMINAL:
                            ts[y] = time
                            dist[y] = 1
                            break
                        if e == ORPHAN:
                            d = INF_DIST
                            break
                        if tree[y] == SRC:
                            y = arc_head[e ^ 1]
                        else:
                            y = arc_head[e]
                    if d < INF_DIST:
                        if d < dmin:
                            best = cand
                            dmin = d
                        y = q
                        while ts[y] != time:
                            ts[y] = time
                            dist[y] = d
                            d -= 1
                            e = parent[y]
                            if tree[y] == SRC:
                                y = arc_head[e ^ 1]
                            else:
                                y = arc_head[e]
                if best >= 0:
                    parent[p2] = best
                    ts[p2] = time
                    dist[p2] = dmin + 1
                    continue
                for k in range(start[p2], start[p2 + 1]):
                    a = adj[k]
                    q = arc_head[a]
                    if tree[q] != tp:
                        continue
                    if tp == SRC:
                        cand = a ^ 1
                    else:
                        cand = a
                    if rcap[cand] > 0 and not queued[q]:
                        queued[q] = 1
                        queue[qtail] = q
                        qtail = (qtail + 1) % qcap
                    e = parent[q]
                    if e >= 0:
                        if tp == SRC:
                            nxt = arc_head[e ^ 1]
                        else:
                            nxt = arc_head[e]
                        if nxt == p2:
                            parent[q] = ORPHAN
                            orphans[n_orph] = q
                            n_orph += 1
                tree[p2] = FREE

    side = np.asarray(tree) == SRC
    return int(flow), side, np.asarray(rcap)


def slic_assign(double[:, :, ::1] lab, double[:, ::1] centers, double step,
                double compactness, active, labels):
    cdef cnp.uint8_t[:, ::1] act = np.ascontiguousarray(active, dtype=np.uint8)
    cdef int[:, ::1] lbl = labels
    cdef Py_ssize_t h = lbl.shape[0], w = lbl.shape[1]
    best_arr = np.full((h, w), np.inf)
    cdef double[:, ::1] best = best_arr
    cdef double ratio = (compactness / step) ** 2
    cdef Py_ssize_t k, y, x, y0, y1, x0, x1
    cdef double cl, ca, cb, cy, cx, d, dy, dx, t0, t1, t2
    with nogil:
        for k in range(centers.shape[0]):
            cl = centers[k, 0]
            ca = centers[k, 1]
            cb = centers[k, 2]
            cy = centers[k, 3]
            cx = centers[k, 4]
            if not isfinite(cy):
                continue
            y0 = <Py_ssize_t>(cy - step)
            if y0 < 0:
                y0 = 0
            y1 = <Py_ssize_t>(cy + step) + 1
            if y1 > h:
                y1 = h
            x0 = <Py_ssize_t>(cx - step)
            if x0 < 0:
                x0 = 0
            x1 = <Py_ssize_t>(cx + step) + 1
            if x1 > w:
                x1 = w
            for y in range(y0, y1):
                dy = y - cy
                for x in range(x0, x1):
                    if not act[y, x]:
                        continue
                    t0 = lab[y, x, 0] - cl
                    t1 = lab[y, x, 1] - ca
                    t2 = lab[y, x, 2] - cb
                    dx = x - cx
                    d = t0 * t0 + t1 * t1 + t2 * t2 + (dy * dy + dx * dx) * ratio
                    if d < best[y, x]:
                        best[y, x] = d
                        lbl[y, x] = <int>k
    return best_arr
