from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def knn_graph(centers: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbours of every point, self excluded, ties to the lower index.

    The KD-tree supplies the k-th distance; every point within that radius is
    then re-ranked exactly by ``(distance, index)`` so equal distances never
    depend on tree traversal order.
    """
    pts = np.asarray(centers, dtype=np.float64)
    n = len(pts)
    if k < 1 or k >= n:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=k + 1)
    radius = dist[:, -1]
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        r = radius[i]
        cand = np.asarray(tree.query_ball_point(pts[i], r * (1 + 1e-9) + 1e-12), dtype=np.int64)
        cand = cand[cand != i]
        d2 = ((pts[cand] - pts[i]) ** 2).sum(axis=1)
        order = np.lexsort((cand, d2))
        out[i] = cand[order[:k]]
    return out
