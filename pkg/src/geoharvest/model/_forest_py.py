"""Pure numpy tree builder and predictor.

This is the fallback for the compiled ``_forest_core`` extension and the
reference it is tested against: both must produce bit-identical trees.
Floating-point operations are therefore kept in a fixed order (sequential
cumulative sums over a stable sort, no pairwise reductions).
"""

from __future__ import annotations

import numpy as np

# relative improvement a split must exceed over the unsplit node
MIN_GAIN = 1e-12


def build_tree(X, y, sample, feat_keys, mtry, min_node):
    """Grow one CART regression tree.

    X : (n, p) float64, y : (n,) float64
    sample : (m,) int64 row indices (bootstrap draw, duplicates allowed)
    feat_keys : (max_nodes, p) float64; node ``i`` considers the ``mtry``
        features with the smallest keys in row ``i``
    Returns (feature, threshold, left, right, value) node arrays.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    sample = np.ascontiguousarray(sample, dtype=np.int64)
    max_nodes = feat_keys.shape[0]
    p = X.shape[1]

    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)

    order = sample.copy()
    queue = [(0, 0, len(order))]
    n_nodes = 1
    head = 0
    while head < len(queue):
        node, start, end = queue[head]
        head += 1
        rows = order[start:end]
        n = end - start
        ys = y[rows]
        total = np.cumsum(ys)[-1]
        value[node] = total / n
        if n < 2 * min_node or ys.max() == ys.min() or n_nodes + 2 > max_nodes:
            continue
        parent = total * total / n

        keys = feat_keys[node]
        cand = np.sort(np.argsort(keys, kind="stable")[:mtry])

        best = -np.inf
        best_f = -1
        best_thr = 0.0
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        ok_size = (nl >= min_node) & (nr >= min_node)
        for f in cand:
            xs = X[rows, f]
            o = np.argsort(xs, kind="stable")
            xs_sorted = xs[o]
            cs = np.cumsum(ys[o])
            tot = cs[-1]
            lsum = cs[:-1]
            rsum = tot - lsum
            proxy = lsum * lsum / nl + rsum * rsum / nr
            valid = ok_size & (xs_sorted[:-1] < xs_sorted[1:])
            if not valid.any():
                continue
            proxy = np.where(valid, proxy, -np.inf)
            i = int(np.argmax(proxy))
            if proxy[i] > best:
                best = proxy[i]
                best_f = int(f)
                thr = 0.5 * (xs_sorted[i] + xs_sorted[i + 1])
                if thr >= xs_sorted[i + 1]:
                    thr = xs_sorted[i]
                best_thr = thr
        if best_f < 0 or not (best - parent > MIN_GAIN * abs(parent)):
            continue

        go_left = X[rows, best_f] <= best_thr
        lrows = rows[go_left]
        rrows = rows[~go_left]
        order[start:start + len(lrows)] = lrows
        order[start + len(lrows):end] = rrows
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        queue.append((n_nodes, start, start + len(lrows)))
        queue.append((n_nodes + 1, start + len(lrows), end))
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


def predict_tree(X, feature, threshold, left, right, value):
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] >= 0
    rows = np.arange(X.shape[0])
    while active.any():
        r = rows[active]
        nd = node[r]
        f = feature[nd]
        go_left = X[r, f] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return value[node]


def predict_forest(X, trees):
    """Mean over trees, accumulated in tree order."""
    X = np.asarray(X, dtype=np.float64)
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for t in trees:
        acc += predict_tree(X, *t)
    return acc / len(trees)
