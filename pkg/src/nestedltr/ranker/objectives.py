"""Gradients of the pairwise and pointwise ranking objectives, and group DCG."""
from __future__ import annotations

import math

import numba
import numpy as np

from ..core import _position_index


def _disc(pos: int, k) -> float:
    if k is not None and pos > k:
        return 0.0
    return 1.0 / math.log2(1 + pos)


def delta_dcg(gains, pos_a, pos_b, k=None) -> float:
    """|DCG change| from swapping the items at 1-based `pos_a` and `pos_b`.

    `gains` is in rank order; `k` truncates the discount (None means no cutoff).
    """
    a, b = _position_index(pos_a), _position_index(pos_b)
    n = len(gains)
    if a == b:
        raise ValueError("positions must differ")
    if a > n or b > n:
        raise ValueError(f"positions {a}, {b} outside a list of length {n}")
    return abs(gains[a - 1] - gains[b - 1]) * abs(_disc(a, k) - _disc(b, k))


@numba.njit(cache=True)
def _rank_positions(scores, tiebreak, s, e, pos):
    """1-based rank of each row in [s, e) by descending score, ties by ascending `tiebreak`."""
    n = e - s
    order = np.empty(n, dtype=np.int64)
    for i in range(n):
        order[i] = s + i
    for i in range(1, n):
        cur = order[i]
        j = i - 1
        while j >= 0:
            o = order[j]
            if scores[o] < scores[cur] or (scores[o] == scores[cur] and tiebreak[o] > tiebreak[cur]):
                order[j + 1] = o
                j -= 1
            else:
                break
        order[j + 1] = cur
    for r in range(n):
        pos[order[r]] = r + 1
    return order


@numba.njit(cache=True)
def _lambda_kernel(bounds, scores, gains, tiebreak, weights, k, sigma, grad, hess):
    pos = np.empty(scores.shape[0], dtype=np.int64)
    for q in range(bounds.shape[0] - 1):
        s = bounds[q]
        e = bounds[q + 1]
        if e - s < 2:
            continue
        lo = gains[s]
        hi = gains[s]
        for i in range(s + 1, e):
            lo = min(lo, gains[i])
            hi = max(hi, gains[i])
        if lo == hi:
            continue
        # pair terms are snapped to a power-of-two grid fine enough that every
        # partial sum is exact, so a group's lambdas cancel to exactly zero
        w_max = 0.0
        for i in range(s, e):
            w_max = max(w_max, weights[i])
        n = e - s
        bound = n * n * sigma * (hi - lo) * w_max
        quantum = 2.0 ** (math.ceil(math.log2(bound)) - 52) if bound > 0 else 1.0
        _rank_positions(scores, tiebreak, s, e, pos)
        for i in range(s, e):
            gi = gains[i]
            di = 1.0 / math.log2(1.0 + pos[i]) if (k <= 0 or pos[i] <= k) else 0.0
            for j in range(s, e):
                if gi <= gains[j]:
                    continue
                dj = 1.0 / math.log2(1.0 + pos[j]) if (k <= 0 or pos[j] <= k) else 0.0
                delta = (gi - gains[j]) * abs(di - dj) * 0.5 * (weights[i] + weights[j])
                if delta == 0.0:
                    continue
                rho = 1.0 / (1.0 + math.exp(sigma * (scores[i] - scores[j])))
                lam = round(sigma * rho * delta / quantum) * quantum
                grad[i] -= lam
                grad[j] += lam
                h = sigma * sigma * rho * (1.0 - rho) * delta
                hess[i] += h
                hess[j] += h


def lambda_gradients_grouped(bounds, scores, gains, k=None, sigma=1.0, tiebreak=None, weights=None):
    """Lambda gradients and hessians for many groups laid out contiguously.

    Every ordered pair with ``gains[i] > gains[j]`` adds ``-sigma*rho*dDCG`` to
    item i, ``+sigma*rho*dDCG`` to item j and ``sigma**2*rho*(1-rho)*dDCG`` to
    both hessians, where ``rho = 1/(1+exp(sigma*(s_i - s_j)))`` and dDCG is
    scaled by the mean of the two example weights.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    gains = np.ascontiguousarray(gains, dtype=np.float64)
    n = len(scores)
    if len(gains) != n:
        raise ValueError("scores and gains must have the same length")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    tiebreak = np.arange(n, dtype=np.int64) if tiebreak is None else np.asarray(tiebreak, dtype=np.int64)
    weights = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=np.float64)
    grad = np.zeros(n)
    hess = np.zeros(n)
    _lambda_kernel(np.asarray(bounds, dtype=np.int64), scores, gains, tiebreak, weights,
                   0 if k is None else int(k), float(sigma), grad, hess)
    return grad, hess


def lambda_gradients(scores, gains, k=None, sigma=1.0):
    """Per-item (gradient, hessian) for a single group."""
    n = len(scores)
    if len(gains) != n:
        raise ValueError("scores and gains must have the same length")
    return lambda_gradients_grouped(np.array([0, n]), scores, gains, k, sigma)


def pairwise_surrogate_loss(scores, gains, k=None, sigma=1.0, positions=None) -> float:
    """Sum over pairs with gains_i > gains_j of dDCG_ij * log(1 + exp(-sigma (s_i - s_j))).

    dDCG uses `positions` (1-based), by default those induced by `scores`;
    holding them fixed makes the lambdas the exact gradient of this loss.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gains = np.asarray(gains, dtype=np.float64)
    if positions is None:
        pos = np.empty(len(scores), dtype=np.int64)
        _rank_positions(scores, np.arange(len(scores)), 0, len(scores), pos)
    else:
        pos = np.asarray(positions, dtype=np.int64)
    return _surrogate_at(scores, gains, pos, k, sigma)


def _surrogate_at(scores, gains, pos, k, sigma) -> float:
    total = 0.0
    for i in range(len(scores)):
        for j in range(len(scores)):
            if gains[i] > gains[j]:
                d = (gains[i] - gains[j]) * abs(_disc(pos[i], k) - _disc(pos[j], k))
                total += d * math.log1p(math.exp(-sigma * (scores[i] - scores[j])))
    return total


def pointwise_gradients(scores, labels, weights=None):
    """Weighted squared error ``w (s - y)^2 / 2``."""
    w = np.ones(len(scores)) if weights is None else np.asarray(weights, dtype=np.float64)
    return w * (np.asarray(scores) - np.asarray(labels)), w.copy()


@numba.njit(cache=True)
def _group_dcg_kernel(bounds, scores, item_ids, gains, k, out):
    pos = np.empty(scores.shape[0], dtype=np.int64)
    for q in range(bounds.shape[0] - 1):
        s = bounds[q]
        e = bounds[q + 1]
        order = _rank_positions(scores, item_ids, s, e, pos)
        total = 0.0
        for r in range(min(k, e - s)):
            total += gains[order[r]] / math.log2(2.0 + r)
        out[q] = total


def group_dcg(bounds, scores, item_ids, gains, k: int) -> np.ndarray:
    """DCG@k of each group when ranked by descending score, ties by ascending item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    bounds = np.asarray(bounds, dtype=np.int64)
    out = np.zeros(len(bounds) - 1)
    _group_dcg_kernel(bounds, np.ascontiguousarray(scores, dtype=np.float64),
                      np.ascontiguousarray(item_ids, dtype=np.int64),
                      np.ascontiguousarray(gains, dtype=np.float64), int(k), out)
    return out
