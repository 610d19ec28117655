"""Compiled inner loops shared by the depth, rank and detection modules."""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def _hd2_point(px, py, qx, qy, buf):
    # Angular sweep: depth = (coincident + m - max open-semicircle count) / n.
    n = px.shape[0]
    m = 0
    coincident = 0
    for j in range(n):
        dx = px[j] - qx
        dy = py[j] - qy
        if dx == 0.0 and dy == 0.0:
            coincident += 1
        else:
            buf[m] = math.atan2(dy, dx)
            m += 1
    if m == 0:
        return coincident / n
    ang = np.sort(buf[:m])
    return (coincident + m - _semicircle_sweep(ang, m)) / n


@njit(cache=True)
def hd2_single(px, py, qx, qy):
    buf = np.empty(px.shape[0])
    return _hd2_point(px, py, qx, qy, buf)


@njit(cache=True)
def _semicircle_sweep(ang, m):
    # Largest number of angles (sorted, first m valid) inside an open half-turn.
    best = 0
    j = 0
    for i in range(m):
        if j < i + 1:
            j = i + 1
        while j < i + m:
            if j < m:
                aj = ang[j]
            else:
                aj = ang[j - m] + TWO_PI
            if aj - ang[i] < math.pi:
                j += 1
            else:
                break
        if j - i > best:
            best = j - i
    return best


@njit(cache=True)
def hd2_sorted_rows(ang, valid):
    """Depths from row-sorted angle matrices; ``valid[i]`` non-coincident entries lead row ``i``."""
    rows, n = ang.shape
    out = np.empty(rows)
    for i in range(rows):
        m = valid[i]
        if m == 0:
            out[i] = 1.0
        else:
            out[i] = (n - _semicircle_sweep(ang[i], m)) / n
    return out


@njit(cache=True)
def min_upper_counts(proj):
    """For each row ``i``: min over columns ``k`` of #{j : proj[j,k] >= proj[i,k]} / n."""
    n, K = proj.shape
    best = np.full(n, n, dtype=np.int64)
    for k in range(K):
        col = np.ascontiguousarray(proj[:, k])
        srt = np.sort(col)
        below = np.searchsorted(srt, col, side="left")
        for i in range(n):
            cnt = n - below[i]
            if cnt < best[i]:
                best[i] = cnt
    return best / n


@njit(cache=True)
def epidemic_scan(prefix, min_gap):
    """Max of the epidemic Kruskal-Wallis statistic over all windows.

    ``prefix[k]`` is the sum of the first ``k`` ranks.  The window ``(r1, r2)``
    covers observations ``r1 .. r2-1``; the lexicographically smallest
    maximiser is returned.
    """
    n = prefix.shape[0] - 1
    c = 12.0 / (n * (n + 1.0))
    total = prefix[n]
    best = -np.inf
    b1 = -1
    b2 = -1
    for r1 in range(1, n):
        base = prefix[r1 - 1]
        for r2 in range(r1 + min_gap, n + 1):
            length = r2 - r1
            s_in = prefix[r2 - 1] - base
            s_out = total - s_in
            w = c * (s_out * s_out / (n - length) + s_in * s_in / length) - 3.0 * (n + 1.0)
            if w > best:
                best = w
                b1 = r1
                b2 = r2
    return best, b1, b2


@njit(cache=True)
def epidemic_null(perms, min_gap):
    reps, n = perms.shape
    out = np.empty(reps)
    prefix = np.zeros(n + 1)
    for r in range(reps):
        for i in range(n):
            prefix[i + 1] = prefix[i] + perms[r, i]
        out[r] = epidemic_scan(prefix, min_gap)[0]
    return out


@njit(cache=True)
def bridge_window_sup(paths, min_gap):
    """sup of (B(b)-B(a))^2 / (tau (1 - tau)) over the same window grid as the scan.

    ``paths`` rows are bridge values at ``i/n`` for ``i = 0..n``.
    """
    reps = paths.shape[0]
    n = paths.shape[1] - 1
    out = np.empty(reps)
    for r in range(reps):
        best = -np.inf
        for a in range(0, n - 1):
            za = paths[r, a]
            for b in range(a + min_gap, n):
                tau = (b - a) / n
                diff = paths[r, b] - za
                v = diff * diff / (tau * (1.0 - tau))
                if v > best:
                    best = v
        out[r] = best
    return out


@njit(cache=True)
def _chain_less(prev, s_a, s_b, k):
    # Lexicographic comparison of the change-point chains ending at s_a and s_b
    # (each of length k, both ending with the chain's own endpoint).
    ca = np.empty(k, dtype=np.int64)
    cb = np.empty(k, dtype=np.int64)
    a = s_a
    b = s_b
    for i in range(k - 1, -1, -1):
        ca[i] = a
        cb[i] = b
        a = prev[a]
        b = prev[b]
    for i in range(k):
        if ca[i] != cb[i]:
            return ca[i] < cb[i]
    return False


@njit(cache=True, inline='always')
def _tol(a, b):
    return 1e-12 * (1.0 + abs(a) + abs(b))


@njit(cache=True, inline='always')
def _slack(a, b):
    # Pruning margin; larger than the selection tolerance so near-ties survive.
    return 1e-9 * (1.0 + abs(a) + abs(b))


@njit(cache=True, inline='always')
def _consider(F, ncp, prev, prefix, c, lam, T, s, best, best_s, best_k):
    # Offer candidate s as the last change before T; returns the new incumbent.
    length = T - s
    seg = prefix[T] - prefix[s]
    v = F[s] - c * seg * seg / length + lam
    k = ncp[s] + (1 if s > 0 else 0)
    if best_s < 0 or v < best - _tol(v, best):
        return v, s, k
    if abs(v - best) <= _tol(v, best):
        if k < best_k or (k == best_k and k > 0 and _chain_less(prev, s, best_s, k)):
            return v, s, k
    return best, best_s, best_k


@njit(cache=True)
def pelt(x, lam, min_seg, functional):
    """Penalised Kruskal-Wallis segmentation by pruned optimal partitioning.

    Minimises sum of segment costs ``-c S^2 / L`` plus ``lam`` per segment,
    with ``c = 12 / (n (n + 1))``.  Candidates are dropped by the inequality
    rule ``F(s) + C(s, t] > F(t)``.  With ``functional`` each candidate also
    tracks the segment means for which it could still be optimal: an interval
    narrowed by every later candidate, minus an excluded interval of means
    for which continuing an earlier segment is strictly better.  It is
    dropped once nothing is left.  Ties prefer fewer change-points, then the
    lexicographically earlier set.

    Returns ``(change_points, n_candidates_evaluated)``.
    """
    n = x.shape[0]
    c = 12.0 / (n * (n + 1.0))
    prefix = np.zeros(n + 1)
    xmin = np.inf
    xmax = -np.inf
    for i in range(n):
        prefix[i + 1] = prefix[i] + x[i]
        xmin = min(xmin, x[i])
        xmax = max(xmax, x[i])
    F = np.full(n + 1, np.inf)
    F[0] = -lam
    ncp = np.zeros(n + 1, dtype=np.int64)
    prev = np.full(n + 1, -1, dtype=np.int64)

    cand = np.empty(n + 1, dtype=np.int64)
    lo = np.empty(n + 1)
    hi = np.empty(n + 1)
    elo = np.empty(n + 1)
    ehi = np.empty(n + 1)
    ncand = 0
    work = 0

    for T in range(min_seg, n + 1):
        tp = T - min_seg
        ft = F[tp]
        prune = ft < np.inf
        # Exclusion for the candidate tp: means near that of its optimal last
        # segment are better served by not cutting at tp.  Overlapping
        # exclusions from other live candidates are absorbed below.
        new_lo = np.inf
        new_hi = -np.inf
        if functional and prune and tp > 0:
            r = prev[tp]
            length = tp - r
            seg = prefix[tp] - prefix[r]
            h2 = (ft - F[r] + c * seg * seg / length - _slack(ft, F[r])) / (c * length)
            if h2 > 0.0:
                m = seg / length
                h = math.sqrt(h2)
                new_lo = m - h
                new_hi = m + h

        best = np.inf
        best_s = -1
        best_k = 0
        keep = 0
        for idx in range(ncand):
            s = cand[idx]
            if prune:
                length = tp - s
                seg = prefix[tp] - prefix[s]
                gain = c * seg * seg / length
                if functional and new_lo < new_hi:
                    h2 = (ft - F[s] + gain - _slack(ft, F[s])) / (c * length)
                    if h2 > 0.0:
                        m = seg / length
                        h = math.sqrt(h2)
                        if m - h < new_hi and m + h > new_lo:
                            new_lo = min(new_lo, m - h)
                            new_hi = max(new_hi, m + h)
                q = F[s] - gain - ft
                tol = _slack(F[s], ft)
                if q > tol:
                    continue
                if functional:
                    m = seg / length
                    h = math.sqrt((tol - q) / (c * length))
                    a = max(lo[idx], m - h)
                    b = min(hi[idx], m + h)
                    if a > b or (elo[idx] < a and b < ehi[idx]):
                        continue
                    lo[idx] = a
                    hi[idx] = b
            cand[keep] = s
            lo[keep] = lo[idx]
            hi[keep] = hi[idx]
            elo[keep] = elo[idx]
            ehi[keep] = ehi[idx]
            keep += 1
            best, best_s, best_k = _consider(F, ncp, prev, prefix, c, lam, T, s, best, best_s, best_k)
            work += 1
        ncand = keep
        if prune:
            cand[ncand] = tp
            lo[ncand] = xmin
            hi[ncand] = xmax
            elo[ncand] = new_lo
            ehi[ncand] = new_hi
            ncand += 1
            best, best_s, best_k = _consider(F, ncp, prev, prefix, c, lam, T, tp, best, best_s, best_k)
            work += 1
        if best_s >= 0:
            F[T] = best
            prev[T] = best_s
            ncp[T] = best_k

    out = np.empty(ncp[n], dtype=np.int64)
    s = prev[n]
    i = ncp[n] - 1
    while s > 0:
        out[i] = s
        i -= 1
        s = prev[s]
    return out, work
