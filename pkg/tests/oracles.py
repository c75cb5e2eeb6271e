"""Slow, independent reference implementations used as test oracles.

They are written straight from the pattern definitions with exhaustive
enumeration and naive tables, sharing no code with the package.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np


def naive_deviation(u):
    """dev[i][j]: max distance of u[i..j] from the straight chord i -> j."""
    n = len(u)
    dev = np.full((n, n), np.inf)
    for i, j in itertools.combinations(range(n), 2):
        chord = np.linspace(u[i], u[j], j - i + 1)
        dev[i, j] = np.max(np.abs(u[i:j + 1] - chord))
    return dev


def brute_force_flag(close, p):
    close = np.asarray(close, dtype=float)
    lo, hi = close.min(), close.max()
    if hi <= lo:
        return None
    u = (close - lo) / (hi - lo)
    n = len(u)
    dev = naive_deviation(u)
    pairs = np.array(list(itertools.combinations(range(n), 2)))
    i, j = pairs[:, 0], pairs[:, 1]
    length = j - i
    fall = u[i] - u[j]
    is_pole = (length <= p.max_pole_len) & (fall > 0) & (dev[i, j] <= p.max_pole_deviation)
    p1 = pairs[is_pole & (fall >= p.min_pole_drop)]
    p2 = pairs[is_pole]
    if len(p1) == 0 or len(p2) == 0:
        return None
    # every (pole1, pole2) combination, flag = the segment between them
    a = np.repeat(p1[:, 0], len(p2))
    b = np.repeat(p1[:, 1], len(p2))
    d = np.tile(p2[:, 0], len(p1))
    e = np.tile(p2[:, 1], len(p1))
    keep = d > b
    a, b, d, e = a[keep], b[keep], d[keep], e[keep]
    if len(a) == 0:
        return None
    drop1 = u[a] - u[b]
    drop2 = u[d] - u[e]
    rise = u[d] - u[b]
    flag_len = d - b
    slope = rise / flag_len
    lo_s, hi_s = p.flag_slope_range
    tol = p.pole_length_ratio_tol
    ok = (flag_len >= p.min_flag_len) & (rise >= 0) & (slope >= lo_s) & (slope <= hi_s)
    ok &= dev[b, d] <= p.max_flag_deviation
    ok &= rise <= p.max_flag_retrace * drop1
    ok &= np.abs(drop2 - drop1) <= tol * drop1
    ok &= np.abs((e - d) - (b - a)) <= tol * (b - a)
    if p.require_extrema:
        top = np.array([u[:k + 1].max() for k in range(n)])
        ok &= u[a] >= top[e]
        ok &= np.array([u[ee] <= u[aa:ee + 1].min() for aa, ee in zip(a, e)])
    if not ok.any():
        return None
    cands = [(drop1[k], drop2[k], -a[k], -b[k], -d[k], -e[k]) for k in np.nonzero(ok)[0]]
    best = max(cands)
    return tuple(int(-x) for x in best[2:])


def _range_table(x, fn):
    n = len(x)
    t = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i, n):
            t[i, j] = fn(x[i:j + 1])
    return t


def brute_force_double_bottom(low, high, close, p):
    low, high, close = (np.asarray(v, dtype=float) for v in (low, high, close))
    n = len(low)
    R = high.max() - low.min()
    if R <= 0:
        return None
    lmin = _range_table(low, np.min)
    hmax = _range_table(high, np.max)
    best = None
    for x1, piv, x2 in itertools.combinations(range(n), 3):
        if x2 - x1 < p.min_separation:
            continue
        if low[x1] > lmin[0, x1]:
            continue
        # pullback: first index of the strict maximum of high over [x1, x2]
        if not (high[piv] > hmax[x1, piv - 1] and high[piv] >= hmax[piv, x2]):
            continue
        if lmin[x1, piv] < low[x1]:
            continue
        level = high[piv]
        later = [t for t in range(x2 + 1, n) if close[t] > level]
        c = later[0] if later else None
        if c is None and p.completion_required:
            continue
        end = n - 1 if c is None else c
        if lmin[piv, end] < low[x2]:
            continue
        if abs(low[x1] - low[x2]) > p.extrema_equality_tol * R:
            continue
        depth = level - max(low[x1], low[x2])
        if depth < p.min_pullback_depth * R:
            continue
        key = (depth, -x1, -piv, -x2)
        if best is None or key > best[0]:
            best = (key, (x1, piv, x2, c))
    return None if best is None else best[1]


def brute_force_double_top(low, high, close, p):
    """Mirror image: peaks take the role of troughs."""
    return brute_force_double_bottom(-np.asarray(high, float), -np.asarray(low, float),
                                     -np.asarray(close, float), p)


def recursive_dtw(a, b):
    a, b = tuple(float(x) for x in a), tuple(float(x) for x in b)

    @functools.lru_cache(maxsize=None)
    def d(i, j):
        cost = (a[i] - b[j]) ** 2
        if i == 0 and j == 0:
            return cost
        options = []
        if i > 0:
            options.append(d(i - 1, j))
        if j > 0:
            options.append(d(i, j - 1))
        if i > 0 and j > 0:
            options.append(d(i - 1, j - 1))
        return cost + min(options)

    return d(len(a) - 1, len(b) - 1)


def naive_conv1d(x, w, b, stride):
    """x (C, T), w (O, C, K) -> (O, T')"""
    c, t = x.shape
    o, _, k = w.shape
    out_t = (t - k) // stride + 1
    y = np.zeros((o, out_t))
    for oc in range(o):
        for s in range(out_t):
            acc = b[oc]
            for ic in range(c):
                for kk in range(k):
                    acc += w[oc, ic, kk] * x[ic, s * stride + kk]
            y[oc, s] = acc
    return y


def naive_conv2d(x, w, b, stride):
    """x (C, H, W), w (O, C, K, K) -> (O, H', W')"""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    oh, ow = (h - k) // stride + 1, (wd - k) // stride + 1
    y = np.zeros((o, oh, ow))
    for oc in range(o):
        for r in range(oh):
            for q in range(ow):
                patch = x[:, r * stride:r * stride + k, q * stride:q * stride + k]
                y[oc, r, q] = b[oc] + np.sum(patch * w[oc])
    return y


def bresenham_cells(r0, c0, r1, c1):
    """Textbook integer Bresenham between two cells."""
    cells = []
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        cells.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def pearson(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    xm, ym = x - x.mean(), y - y.mean()
    return float(np.sum(xm * ym) / np.sqrt(np.sum(xm ** 2) * np.sum(ym ** 2)))
