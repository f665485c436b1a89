"""Histogram-based regression trees grown on (gradient, hessian) pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LEAF = -1


@dataclass
class Tree:
    """Array-encoded binary tree; node 0 is the root.

    Internal nodes route ``x[feature] <= threshold`` to `left`.  Leaves have
    ``feature == -1`` and carry `value`.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        n = len(self.feature)
        if n == 0 or not all(len(a) == n for a in (self.threshold, self.left, self.right, self.value)):
            raise ValueError("tree arrays must be non-empty and equally long")
        internal = self.feature != LEAF
        if np.any((self.left[internal] <= 0) | (self.right[internal] <= 0)):
            raise ValueError("internal nodes need two children")
        if np.any((self.left[~internal] != LEAF) | (self.right[~internal] != LEAF)):
            raise ValueError("leaves cannot have children")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.zeros(len(X))
        _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value, out)
        return out

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(**{k: d[k] for k in ("feature", "threshold", "left", "right", "value")})

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> "Tree":
        return cls([feature, LEAF, LEAF], [threshold, 0.0, 0.0], [1, LEAF, LEAF], [2, LEAF, LEAF],
                   [0.0, left_value, right_value])

    @classmethod
    def leaf(cls, value: float) -> "Tree":
        return cls([LEAF], [0.0], [LEAF], [LEAF], [value])


@numba.njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value, out):
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != -1:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += value[node]


# --------------------------------------------------------------------------
# binning


def quantile_bin_edges(X: np.ndarray, max_bins: int = 64):
    """Per-feature thresholds; a value falls in bin ``searchsorted(edges, x, 'left')``.

    Edges are observed values, so `x <= edges[b]` holds exactly for bins ``<= b``.
    """
    if max_bins < 2:
        raise ValueError("histogram_bins must be >= 2")
    if max_bins > 256:
        raise ValueError("histogram_bins must be <= 256")
    edges = []
    for f in range(X.shape[1]):
        col = X[:, f]
        uniq = np.unique(col)
        if len(uniq) <= max_bins:
            e = uniq[:-1]
        else:
            qs = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
            e = np.unique(np.quantile(col, qs, method="inverted_cdf"))
            e = e[e < uniq[-1]]
        edges.append(np.ascontiguousarray(e, dtype=np.float64))
    return edges


def apply_bins(X: np.ndarray, edges) -> np.ndarray:
    binned = np.empty(X.shape, dtype=np.uint8)
    for f, e in enumerate(edges):
        binned[:, f] = np.searchsorted(e, X[:, f], side="left")
    return binned


# --------------------------------------------------------------------------
# growth


@numba.njit(cache=True)
def _build_hist(binned, grad, hess, indices, start, end, hist):
    n_feat = binned.shape[1]
    for p in range(start, end):
        r = indices[p]
        g = grad[r]
        h = hess[r]
        for f in range(n_feat):
            b = binned[r, f]
            hist[f, b, 0] += g
            hist[f, b, 1] += h
            hist[f, b, 2] += 1.0


@numba.njit(cache=True)
def _best_split(hist, n_bins, feature_mask, G, H, N, reg, min_leaf, min_gain):
    best_gain = min_gain
    best_f = -1
    best_b = -1
    parent = G * G / (H + reg) if H + reg > 0 else 0.0
    for f in range(hist.shape[0]):
        if not feature_mask[f]:
            continue
        gl = 0.0
        hl = 0.0
        nl = 0.0
        for b in range(n_bins[f] - 1):
            gl += hist[f, b, 0]
            hl += hist[f, b, 1]
            nl += hist[f, b, 2]
            nr = N - nl
            if nl < min_leaf:
                continue
            if nr < min_leaf:
                break
            hr = H - hl
            gr = G - gl
            if hl + reg <= 0 or hr + reg <= 0:
                continue
            gain = gl * gl / (hl + reg) + gr * gr / (hr + reg) - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_f, best_b, best_gain


@numba.njit(cache=True)
def _grow(binned, grad, hess, n_bins, feature_mask, max_depth, min_leaf, reg, min_gain):
    n_rows, n_feat = binned.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    bin_thr = np.zeros(max_nodes, dtype=np.int64)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)
    node_start = np.zeros(max_nodes, dtype=np.int64)
    node_end = np.zeros(max_nodes, dtype=np.int64)
    node_g = np.zeros(max_nodes)
    node_h = np.zeros(max_nodes)
    max_b = 0
    for f in range(n_feat):
        if n_bins[f] > max_b:
            max_b = n_bins[f]
    max_b = max(max_b, 1)

    indices = np.arange(n_rows)
    scratch = np.empty(n_rows, dtype=np.int64)
    g_tot = 0.0
    h_tot = 0.0
    for r in range(n_rows):
        g_tot += grad[r]
        h_tot += hess[r]
    node_end[0] = n_rows
    node_g[0] = g_tot
    node_h[0] = h_tot
    n_nodes = 1

    frontier = np.zeros(1, dtype=np.int64)
    hists = np.zeros((1, n_feat, max_b, 3))
    _build_hist(binned, grad, hess, indices, 0, n_rows, hists[0])

    for depth in range(max_depth):
        n_front = frontier.shape[0]
        split_f = np.full(n_front, -1, dtype=np.int64)
        split_b = np.zeros(n_front, dtype=np.int64)
        n_split = 0
        for q in range(n_front):
            node = frontier[q]
            cnt = float(node_end[node] - node_start[node])
            f, b, gain = _best_split(hists[q], n_bins, feature_mask, node_g[node], node_h[node], cnt,
                                     reg, min_leaf, min_gain)
            split_f[q] = f
            split_b[q] = b
            if f >= 0:
                n_split += 1
        if n_split == 0:
            break
        new_frontier = np.zeros(2 * n_split, dtype=np.int64)
        new_hists = np.zeros((2 * n_split, n_feat, max_b, 3))
        k = 0
        for q in range(n_front):
            f = split_f[q]
            if f < 0:
                continue
            node = frontier[q]
            b = split_b[q]
            s = node_start[node]
            e = node_end[node]
            # stable partition keeps row order deterministic
            nl = 0
            for p in range(s, e):
                if binned[indices[p], f] <= b:
                    indices[s + nl] = indices[p]
                    nl += 1
                else:
                    scratch[p - nl] = indices[p]
            for p in range(s + nl, e):
                indices[p] = scratch[p - nl]
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            feature[node] = f
            bin_thr[node] = b
            left[node] = lc
            right[node] = rc
            node_start[lc] = s
            node_end[lc] = s + nl
            node_start[rc] = s + nl
            node_end[rc] = e
            gl = 0.0
            hl = 0.0
            for bb in range(b + 1):
                gl += hists[q, f, bb, 0]
                hl += hists[q, f, bb, 1]
            node_g[lc] = gl
            node_h[lc] = hl
            node_g[rc] = node_g[node] - gl
            node_h[rc] = node_h[node] - hl
            small, big = 2 * k, 2 * k + 1
            if nl <= (e - s) - nl:
                _build_hist(binned, grad, hess, indices, s, s + nl, new_hists[small])
                new_frontier[small] = lc
                new_frontier[big] = rc
            else:
                _build_hist(binned, grad, hess, indices, s + nl, e, new_hists[small])
                new_frontier[small] = rc
                new_frontier[big] = lc
            new_hists[big] = hists[q] - new_hists[small]
            k += 1
        frontier = new_frontier
        hists = new_hists

    row_value = np.zeros(n_rows)
    for node in range(n_nodes):
        if feature[node] == -1:
            denom = node_h[node] + reg
            v = -node_g[node] / denom if denom > 0 else 0.0
            value[node] = v
            for p in range(node_start[node], node_end[node]):
                row_value[indices[p]] = v
    return (feature[:n_nodes], bin_thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes],
            row_value)


def grow_tree(binned, grad, hess, edges, max_depth=6, min_examples_per_leaf=20, l2_reg=1.0,
              min_split_gain=0.0, feature_mask=None):
    """Greedy depth-wise tree on pre-binned data.

    Leaves take the Newton step ``-sum(grad) / (sum(hess) + l2_reg)``.
    Returns the tree and the leaf value of every training row.
    """
    n_bins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    if feature_mask is None:
        feature_mask = np.ones(len(edges), dtype=np.bool_)
    feature, bin_thr, left, right, value, row_value = _grow(
        binned, np.ascontiguousarray(grad, dtype=np.float64), np.ascontiguousarray(hess, dtype=np.float64),
        n_bins, feature_mask, int(max_depth), float(min_examples_per_leaf), float(l2_reg), float(min_split_gain))
    threshold = np.zeros(len(feature))
    for node in np.flatnonzero(feature != LEAF):
        threshold[node] = edges[feature[node]][bin_thr[node]]
    return Tree(feature, threshold, left, right, value), row_value
