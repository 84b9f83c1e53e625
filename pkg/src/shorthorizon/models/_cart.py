"""Compiled CART regression tree builder (variance reduction, midpoint thresholds)."""

from __future__ import annotations

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def build_tree(X, y, sample, max_depth):
    """Grow one tree on rows ``sample`` (may repeat) of ``X``.

    Returns parallel node arrays: feature, threshold, left, right, value,
    depth, gain. ``feature == -1`` marks a leaf; ``gain`` is the drop in the
    sum of squared deviations achieved by the node's split.
    """
    m0 = sample.shape[0]
    p = X.shape[1]
    cap = 2 * m0 + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    gain = np.zeros(cap)

    # node membership lives in one buffer; each node owns a contiguous slice
    rows = sample.copy()
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m0
    top = 1
    n_nodes = 1

    vals = np.empty(m0)
    ys = np.empty(m0)
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        m = hi - lo
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(lo, hi):
            v = y[rows[k]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = total / m
        if depth[node] >= max_depth or m < 2 or ymin == ymax:
            continue

        base = total * total / m
        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        for f in range(p):
            for k in range(m):
                vals[k] = X[rows[lo + k], f]
            order = np.argsort(vals[:m], kind="mergesort")
            for k in range(m):
                ys[k] = y[rows[lo + order[k]]]
            s_left = 0.0
            for k in range(m - 1):
                s_left += ys[k]
                a = vals[order[k]]
                b = vals[order[k + 1]]
                if a < b:
                    n_left = k + 1
                    s_right = total - s_left
                    score = s_left * s_left / n_left + s_right * s_right / (m - n_left)
                    if score > best_score:
                        best_score = score
                        best_f = f
                        thr = 0.5 * (a + b)
                        if thr >= b:
                            thr = a
                        best_thr = thr
        if best_f < 0 or best_score - base <= 0.0:
            continue

        # stable in-place partition of rows[lo:hi] by the chosen split
        buf = rows[lo:hi].copy()
        i = lo
        for k in range(m):
            if X[buf[k], best_f] <= best_thr:
                rows[i] = buf[k]
                i += 1
        mid = i
        for k in range(m):
            if X[buf[k], best_f] > best_thr:
                rows[i] = buf[k]
                i += 1

        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = best_score - base
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        depth[lnode] = depth[node] + 1
        depth[rnode] = depth[node] + 1
        # push right first so the left subtree is numbered first
        stack_node[top] = rnode
        stack_lo[top] = mid
        stack_hi[top] = hi
        top += 1
        stack_node[top] = lnode
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1

    return (
        feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
        right[:n_nodes].copy(), value[:n_nodes].copy(), depth[:n_nodes].copy(), gain[:n_nodes].copy(),
    )


@njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value, depth, depth_limit):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        node = 0
        while feature[node] != LEAF and depth[node] < depth_limit:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out
