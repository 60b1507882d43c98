"""Small shared helpers: seeded k-means and label-aware connected components."""
import warnings

import numpy as np
from scipy.cluster.vq import kmeans2, vq
from scipy import sparse
from scipy.sparse.csgraph import connected_components


def kmeans(data, k, seed=0, iters=50, n_init=4):
    """Seeded k-means (scipy's ``kmeans2`` with k-means++ init), best of ``n_init``.

    Returns ``(centers, assignment)``.  ``k`` is clipped to the number of
    distinct rows so degenerate inputs never ask for more clusters than points.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    k = max(1, min(int(k), len(np.unique(data, axis=0))))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centers, _ = kmeans2(data, k, iter=iters, minit="++", seed=rng)
        assign, dist = vq(data, centers)
        inertia = float(np.sum(dist ** 2))
        if best is None or inertia < best[0] - 1e-12:
            best = (inertia, centers, assign.astype(np.int64))
    return best[1], best[2]


def grid_edges(h, w):
    """Index pairs of horizontally and vertically adjacent pixels."""
    idx = np.arange(h * w).reshape(h, w)
    return (np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()]),
            np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()]))


def label_components(labels):
    """4-connected components of equal-valued pixels.

    Returns ``(component_image, n_components)``.
    """
    h, w = labels.shape
    a, b = grid_edges(h, w)
    flat = labels.ravel()
    same = flat[a] == flat[b]
    g = sparse.coo_matrix((np.ones(same.sum()), (a[same], b[same])), shape=(h * w, h * w))
    n, comp = connected_components(g, directed=False)
    return comp.reshape(h, w), n


def relabel_sequential(values):
    """Map values to 0..k-1 in order of first appearance."""
    _, first, inverse = np.unique(values, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse]
