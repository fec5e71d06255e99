"""Independent brute-force oracles shared by unit and acceptance tests."""

import numpy as np


def numeric_grad(f, x, step=1e-4):
    """Central finite differences of a scalar function over array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def ward_oracle(square: np.ndarray):
    """From-scratch agglomerative Ward clustering over a Euclidean distance
    matrix.

    Every step recomputes, for every pair of current clusters, the Ward
    merge height directly from the original pairwise distances via the
    centroid identity (no incremental update), then merges the closest
    pair.  Ties break towards the lexicographically lowest node-id pair.
    Returns a list of (left, right, height, size) tuples with the usual
    node numbering (leaves 0..n-1, merge i creates node n+i).
    """
    d2 = np.square(np.asarray(square, dtype=np.float64))
    n = d2.shape[0]
    clusters = {i: [i] for i in range(n)}

    def centroid_gap_sq(a, b):
        cross = d2[np.ix_(a, b)].mean()
        within_a = d2[np.ix_(a, a)].sum() / (2.0 * len(a) * len(a))
        within_b = d2[np.ix_(b, b)].sum() / (2.0 * len(b) * len(b))
        return cross - within_a - within_b

    merges = []
    for step in range(n - 1):
        ids = sorted(clusters)
        best = None
        for i in range(len(ids) - 1):
            for j in range(i + 1, len(ids)):
                a, b = clusters[ids[i]], clusters[ids[j]]
                gap = centroid_gap_sq(a, b)
                height_sq = 2.0 * len(a) * len(b) / (len(a) + len(b)) * gap
                key = (height_sq, ids[i], ids[j])
                if best is None or key < best:
                    best = key
        height_sq, left, right = best
        merged = clusters.pop(left) + clusters.pop(right)
        clusters[n + step] = merged
        merges.append((left, right, float(np.sqrt(max(height_sq, 0.0))), len(merged)))
    return merges


def euclidean_square(points: np.ndarray) -> np.ndarray:
    """Exact symmetric Euclidean distance matrix of a point set."""
    n = len(points)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.sqrt(((points[i] - points[j]) ** 2).sum()))
            out[i, j] = out[j, i] = d
    return out
