"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. The public names at the bottom of the module are
bound to one or the other by :data:`vcconsensus._accel.USE_NUMBA`. Both
versions are importable directly so the benchmark and the tests can compare
them.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


# --------------------------------------------------------------------------
# consensus term  pi_i = sum_j a_ij (x_j(k - tau_ij) - x_i(k)) T
# --------------------------------------------------------------------------

def _consensus_terms_loops(history, weights, delays, T):
    n = weights.shape[0]
    r = history.shape[2]
    out = np.zeros((n, r))
    for i in range(n):
        for j in range(n):
            w = weights[i, j]
            if w > 0.0:
                tau = delays[i, j]
                for a in range(r):
                    out[i, a] += w * (history[tau, j, a] - history[0, i, a])
        for a in range(r):
            out[i, a] *= T
    return out


def consensus_terms_numpy(history, weights, delays, T):
    n = weights.shape[0]
    cols = np.arange(n)[None, :]
    delayed = history[delays, cols]  # (n, n, r): x_j(k - tau_ij)
    diff = delayed - history[0][:, None, :]
    return np.einsum("ij,ijr->ir", weights, diff) * T


consensus_terms_numba = njit(_consensus_terms_loops)


# --------------------------------------------------------------------------
# ray / primitive intersection intervals, t >= 0, NaN marks an empty interval
# --------------------------------------------------------------------------

def _ray_ball_intervals_loops(dirs, centers, radii):
    N = dirs.shape[0]
    P = centers.shape[0]
    r = dirs.shape[1]
    lo = np.full((N, P), np.nan)
    hi = np.full((N, P), np.nan)
    for q in range(N):
        for p in range(P):
            dc = 0.0
            cc = 0.0
            for a in range(r):
                dc += dirs[q, a] * centers[p, a]
                cc += centers[p, a] * centers[p, a]
            disc = dc * dc - cc + radii[p] * radii[p]
            if disc < 0.0:
                continue
            s = np.sqrt(disc)
            t1 = dc - s
            t2 = dc + s
            if t2 < 0.0:
                continue
            lo[q, p] = max(t1, 0.0)
            hi[q, p] = t2
    return lo, hi


def ray_ball_intervals_numpy(dirs, centers, radii):
    dc = dirs @ centers.T
    cc = np.sum(centers * centers, axis=1)[None, :]
    disc = dc * dc - cc + (radii * radii)[None, :]
    with np.errstate(invalid="ignore"):
        s = np.sqrt(disc)
    t1 = dc - s
    t2 = dc + s
    empty = (disc < 0.0) | (t2 < 0.0)
    lo = np.where(empty, np.nan, np.maximum(t1, 0.0))
    hi = np.where(empty, np.nan, t2)
    return lo, hi


ray_ball_intervals_numba = njit(_ray_ball_intervals_loops)


def _ray_box_intervals_loops(dirs, lower, upper):
    N = dirs.shape[0]
    P = lower.shape[0]
    r = dirs.shape[1]
    lo = np.full((N, P), np.nan)
    hi = np.full((N, P), np.nan)
    for q in range(N):
        for p in range(P):
            tlo = 0.0
            thi = np.inf
            ok = True
            for a in range(r):
                d = dirs[q, a]
                if d == 0.0:
                    if lower[p, a] > 0.0 or upper[p, a] < 0.0:
                        ok = False
                        break
                    continue
                t1 = lower[p, a] / d
                t2 = upper[p, a] / d
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tlo:
                    tlo = t1
                if t2 < thi:
                    thi = t2
            if ok and tlo <= thi:
                lo[q, p] = tlo
                hi[q, p] = thi
    return lo, hi


def ray_box_intervals_numpy(dirs, lower, upper):
    d = dirs[:, None, :]
    zero = d == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lower[None, :, :] / d
        t2 = upper[None, :, :] / d
    a = np.where(zero, -np.inf, np.minimum(t1, t2))
    b = np.where(zero, np.inf, np.maximum(t1, t2))
    blocked = zero & ((lower[None] > 0.0) | (upper[None] < 0.0))
    tlo = np.maximum(a.max(axis=2), 0.0)
    thi = b.min(axis=2)
    empty = blocked.any(axis=2) | (tlo > thi)
    return np.where(empty, np.nan, tlo), np.where(empty, np.nan, thi)


ray_box_intervals_numba = njit(_ray_box_intervals_loops)


# --------------------------------------------------------------------------
# one step of the transition-product fold with per-column extrema tracking
# --------------------------------------------------------------------------

def _fold_step_loops(factor, gamma, colmax_prev, colmin_prev):
    new = np.dot(factor, gamma)
    D = new.shape[0]
    colmax = np.empty(D)
    colmin = np.empty(D)
    row_err = 0.0
    min_entry = np.inf
    for i in range(D):
        s = 0.0
        for j in range(D):
            s += new[i, j]
        if abs(s - 1.0) > row_err:
            row_err = abs(s - 1.0)
    for j in range(D):
        hi = -np.inf
        lo = np.inf
        for i in range(D):
            v = new[i, j]
            if v > hi:
                hi = v
            if v < lo:
                lo = v
        colmax[j] = hi
        colmin[j] = lo
        if lo < min_entry:
            min_entry = lo
    max_increase = -np.inf
    min_decrease = -np.inf
    for j in range(D):
        if colmax[j] - colmax_prev[j] > max_increase:
            max_increase = colmax[j] - colmax_prev[j]
        if colmin_prev[j] - colmin[j] > min_decrease:
            min_decrease = colmin_prev[j] - colmin[j]
    return new, row_err, min_entry, max_increase, min_decrease, colmax, colmin


def fold_step_numpy(factor, gamma, colmax_prev, colmin_prev):
    new = factor @ gamma
    row_err = float(np.max(np.abs(new.sum(axis=1) - 1.0)))
    colmax = new.max(axis=0)
    colmin = new.min(axis=0)
    return (
        new,
        row_err,
        float(colmin.min()),
        float(np.max(colmax - colmax_prev)),
        float(np.max(colmin_prev - colmin)),
        colmax,
        colmin,
    )


fold_step_numba = njit(_fold_step_loops)


if USE_NUMBA:
    consensus_terms = consensus_terms_numba
    ray_ball_intervals = ray_ball_intervals_numba
    ray_box_intervals = ray_box_intervals_numba
    fold_step = fold_step_numba
else:
    consensus_terms = consensus_terms_numpy
    ray_ball_intervals = ray_ball_intervals_numpy
    ray_box_intervals = ray_box_intervals_numpy
    fold_step = fold_step_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
