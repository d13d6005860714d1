"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The module-level names (``interp_tracks``, ``segments_blocked``, ...) point at
the numba versions unless ``VAMSIM_DISABLE_NUMBA`` is set to a truthy value or
numba cannot be imported. Both flavours are always importable under their
``*_numpy`` / ``*_numba`` names so tests can cross-check them.

Time arrays are int64 microseconds; geometry is float64 meters.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("VAMSIM_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED

# time offset used to keep per-group keys disjoint in the numpy fallbacks
_GROUP_STRIDE = np.int64(1) << np.int64(40)


# ---------------------------------------------------------------------------
# trace interpolation
# ---------------------------------------------------------------------------


def track_keys(t_all, offsets):
    """Sort keys for ``interp_tracks_numpy``: track index high, time low."""
    track_of_sample = np.repeat(np.arange(len(offsets) - 1, dtype=np.int64), np.diff(offsets))
    return track_of_sample * _GROUP_STRIDE + t_all


def interp_tracks_numpy(t_all, keys, x_all, y_all, v_all, h_all, offsets, idx, t):
    """Interpolate tracks ``idx`` at time ``t``.

    Tracks are concatenated in ``*_all``; track ``k`` occupies
    ``offsets[k]:offsets[k+1]``; ``keys`` comes from ``track_keys``. Returns
    ``(x, y, v, h, ok)`` where ``ok`` is false for tracks whose lifespan does
    not contain ``t``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    n = idx.shape[0]
    lo = offsets[idx]
    hi = offsets[idx + 1] - 1
    ok = (t_all[lo] <= t) & (t_all[hi] >= t)
    x = np.full(n, np.nan)
    y = np.full(n, np.nan)
    v = np.full(n, np.nan)
    h = np.full(n, np.nan)
    if not ok.any():
        return x, y, v, h, ok
    sel = np.nonzero(ok)[0]
    qkey = idx[sel] * _GROUP_STRIDE + np.int64(t)
    j = np.searchsorted(keys, qkey, side="right") - 1
    exact = t_all[j] == t
    j1 = np.where(exact, j, j + 1)
    t0 = t_all[j].astype(np.float64)
    t1 = t_all[j1].astype(np.float64)
    span = np.where(exact, 1.0, t1 - t0)
    f = np.where(exact, 0.0, (t - t0) / span)
    x[sel] = x_all[j] + f * (x_all[j1] - x_all[j])
    y[sel] = y_all[j] + f * (y_all[j1] - y_all[j])
    v[sel] = v_all[j] + f * (v_all[j1] - v_all[j])
    dh = np.mod(h_all[j1] - h_all[j] + 180.0, 360.0) - 180.0
    hh = np.mod(h_all[j] + f * dh, 360.0)
    hh = np.where(hh >= 360.0, hh - 360.0, hh)
    hh = np.where(exact, h_all[j], hh)
    h[sel] = hh
    return x, y, v, h, ok


def _interp_tracks_loop(t_all, keys, x_all, y_all, v_all, h_all, offsets, idx, t):
    n = idx.shape[0]
    x = np.full(n, np.nan)
    y = np.full(n, np.nan)
    v = np.full(n, np.nan)
    h = np.full(n, np.nan)
    ok = np.zeros(n, dtype=np.bool_)
    for k in range(n):
        lo = offsets[idx[k]]
        hi = offsets[idx[k] + 1] - 1
        if t < t_all[lo] or t > t_all[hi]:
            continue
        ok[k] = True
        # rightmost sample with time <= t
        a = lo
        b = hi
        while a < b:
            m = (a + b + 1) // 2
            if t_all[m] <= t:
                a = m
            else:
                b = m - 1
        j = a
        if t_all[j] == t:
            x[k] = x_all[j]
            y[k] = y_all[j]
            v[k] = v_all[j]
            h[k] = h_all[j]
            continue
        j1 = j + 1
        f = (t - t_all[j]) / (t_all[j1] - t_all[j])
        x[k] = x_all[j] + f * (x_all[j1] - x_all[j])
        y[k] = y_all[j] + f * (y_all[j1] - y_all[j])
        v[k] = v_all[j] + f * (v_all[j1] - v_all[j])
        dh = np.mod(h_all[j1] - h_all[j] + 180.0, 360.0) - 180.0
        hh = np.mod(h_all[j] + f * dh, 360.0)
        if hh >= 360.0:
            hh -= 360.0
        h[k] = hh
    return x, y, v, h, ok


# ---------------------------------------------------------------------------
# line of sight
# ---------------------------------------------------------------------------


def segments_blocked_numpy(ax, ay, bx, by, ex0, ey0, ex1, ey1, ring_offsets):
    """True where segment (a_i, b_i) meets any polygon boundary or interior.

    Polygon ``p`` has edges ``ring_offsets[p]:ring_offsets[p+1]``; edges are
    (e0 -> e1). Touching counts as blocked.
    """
    n = ax.shape[0]
    if n == 0 or ex0.shape[0] == 0:
        return np.zeros(n, dtype=np.bool_)
    pax, pay, pbx, pby = ax[:, None], ay[:, None], bx[:, None], by[:, None]

    def orient(px, py, qx, qy, rx, ry):
        return np.sign((qy - py) * (rx - qx) - (qx - px) * (ry - qy))

    def on_seg(px, py, qx, qy, rx, ry):
        # q collinear with p-r: is q inside the bounding box of p-r
        return (
            (qx <= np.maximum(px, rx))
            & (qx >= np.minimum(px, rx))
            & (qy <= np.maximum(py, ry))
            & (qy >= np.minimum(py, ry))
        )

    o1 = orient(pax, pay, pbx, pby, ex0, ey0)
    o2 = orient(pax, pay, pbx, pby, ex1, ey1)
    o3 = orient(ex0, ey0, ex1, ey1, pax, pay)
    o4 = orient(ex0, ey0, ex1, ey1, pbx, pby)
    hit = (o1 != o2) & (o3 != o4)
    hit |= (o1 == 0) & on_seg(pax, pay, ex0, ey0, pbx, pby)
    hit |= (o2 == 0) & on_seg(pax, pay, ex1, ey1, pbx, pby)
    hit |= (o3 == 0) & on_seg(ex0, ey0, pax, pay, ex1, ey1)
    hit |= (o4 == 0) & on_seg(ex0, ey0, pbx, pby, ex1, ey1)
    blocked = hit.any(axis=1)

    # a segment strictly inside a polygon crosses no edge; test one endpoint
    crosses = ((ey0 > pay) != (ey1 > pay)) & (
        pax < (ex1 - ex0) * (pay - ey0) / np.where(ey1 == ey0, 1.0, ey1 - ey0) + ex0
    )
    n_poly = ring_offsets.shape[0] - 1
    for p in range(n_poly):
        lo, hi = ring_offsets[p], ring_offsets[p + 1]
        inside = (crosses[:, lo:hi].sum(axis=1) % 2) == 1
        blocked |= inside
    return blocked


def _segments_blocked_loop(ax, ay, bx, by, ex0, ey0, ex1, ey1, ring_offsets):
    n = ax.shape[0]
    m = ex0.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    n_poly = ring_offsets.shape[0] - 1
    for i in range(n):
        px, py, rx, ry = ax[i], ay[i], bx[i], by[i]
        hit = False
        for j in range(m):
            sx, sy, tx, ty = ex0[j], ey0[j], ex1[j], ey1[j]
            o1 = np.sign((ry - py) * (sx - rx) - (rx - px) * (sy - ry))
            o2 = np.sign((ry - py) * (tx - rx) - (rx - px) * (ty - ry))
            o3 = np.sign((ty - sy) * (px - tx) - (tx - sx) * (py - ty))
            o4 = np.sign((ty - sy) * (rx - tx) - (tx - sx) * (ry - ty))
            if o1 != o2 and o3 != o4:
                hit = True
            elif o1 == 0 and min(px, rx) <= sx <= max(px, rx) and min(py, ry) <= sy <= max(py, ry):
                hit = True
            elif o2 == 0 and min(px, rx) <= tx <= max(px, rx) and min(py, ry) <= ty <= max(py, ry):
                hit = True
            elif o3 == 0 and min(sx, tx) <= px <= max(sx, tx) and min(sy, ty) <= py <= max(sy, ty):
                hit = True
            elif o4 == 0 and min(sx, tx) <= rx <= max(sx, tx) and min(sy, ty) <= ry <= max(sy, ty):
                hit = True
            if hit:
                break
        if not hit:
            for p in range(n_poly):
                c = 0
                for j in range(ring_offsets[p], ring_offsets[p + 1]):
                    sx, sy, tx, ty = ex0[j], ey0[j], ex1[j], ey1[j]
                    if (sy > py) != (ty > py):
                        den = ty - sy if ty != sy else 1.0
                        if px < (tx - sx) * (py - sy) / den + sx:
                            c += 1
                if c % 2 == 1:
                    hit = True
                    break
        out[i] = hit
    return out


# ---------------------------------------------------------------------------
# collisions
# ---------------------------------------------------------------------------


def collision_lost_numpy(rx, start, end):
    """True for every event whose interval overlaps another at the same rx."""
    n = rx.shape[0]
    lost = np.zeros(n, dtype=np.bool_)
    if n < 2:
        return lost
    order = np.lexsort((start, rx))
    r = rx[order].astype(np.int64)
    s = start[order].astype(np.int64) + r * _GROUP_STRIDE
    e = end[order].astype(np.int64) + r * _GROUP_STRIDE
    runmax = np.maximum.accumulate(e)
    prev = np.empty(n, dtype=bool)
    prev[0] = False
    prev[1:] = runmax[:-1] > s[1:]
    nxt = np.empty(n, dtype=bool)
    nxt[-1] = False
    nxt[:-1] = (r[1:] == r[:-1]) & (s[1:] < e[:-1])
    lost[order] = prev | nxt
    return lost


def _collision_lost_loop(rx, start, end):
    n = rx.shape[0]
    lost = np.zeros(n, dtype=np.bool_)
    if n < 2:
        return lost
    order = np.argsort(rx.astype(np.int64) * (1 << 40) + start, kind="mergesort")
    i = 0
    while i < n:
        j = i
        while j < n and rx[order[j]] == rx[order[i]]:
            j += 1
        runmax = end[order[i]]
        for k in range(i + 1, j):
            a = order[k]
            if runmax > start[a]:
                lost[a] = True
            if end[a] > runmax:
                runmax = end[a]
        for k in range(i, j - 1):
            a = order[k]
            if start[order[k + 1]] < end[a]:
                lost[a] = True
        i = j
    return lost


# ---------------------------------------------------------------------------
# channel busy time
# ---------------------------------------------------------------------------


def busy_per_window_numpy(node, start, end, n_nodes, t0, window, n_windows):
    """Union busy time (us) per node and window.

    Intervals ``[start, end)`` belong to ``node``; windows are
    ``[t0 + k*window, t0 + (k+1)*window)``. Returns int64 ``[n_nodes, n_windows]``.
    """
    out = np.zeros((n_nodes, n_windows), dtype=np.int64)
    if node.shape[0] == 0 or n_windows == 0:
        return out
    node = node.astype(np.int64)
    order = np.lexsort((start, node))
    nd = node[order]
    s = start[order].astype(np.int64) + nd * _GROUP_STRIDE
    e = end[order].astype(np.int64) + nd * _GROUP_STRIDE
    runmax = np.maximum.accumulate(e)
    new = np.empty(s.shape[0], dtype=bool)
    new[0] = True
    new[1:] = s[1:] > runmax[:-1]
    first = np.nonzero(new)[0]
    last = np.append(first[1:] - 1, s.shape[0] - 1)
    seg_node = nd[first]
    seg_a = s[first]
    seg_b = runmax[last]
    seg_len = seg_b - seg_a
    cum = np.concatenate(([0], np.cumsum(seg_len)))

    # covered length up to each boundary W: sum over segments of clip(W - a, 0, len)
    bounds = t0 + window * np.arange(n_windows + 1, dtype=np.int64)
    q = (np.arange(n_nodes, dtype=np.int64)[:, None] * _GROUP_STRIDE + bounds[None, :]).ravel()
    j = np.searchsorted(seg_a, q, side="right") - 1
    qn = np.repeat(np.arange(n_nodes, dtype=np.int64), n_windows + 1)
    valid = (j >= 0) & (seg_node[np.clip(j, 0, None)] == qn)
    jj = np.clip(j, 0, None)
    # first segment index of each queried node
    node_first = np.searchsorted(seg_node, qn, side="left")
    partial = np.minimum(q - seg_a[jj], seg_len[jj])
    cov = np.where(valid, cum[jj] - cum[node_first] + partial, 0)
    cov = cov.reshape(n_nodes, n_windows + 1)
    out[:] = np.diff(cov, axis=1)
    return out


def _busy_per_window_loop(node, start, end, n_nodes, t0, window, n_windows):
    out = np.zeros((n_nodes, n_windows), dtype=np.int64)
    n = node.shape[0]
    if n == 0 or n_windows == 0:
        return out
    order = np.argsort(node.astype(np.int64) * (1 << 40) + start, kind="mergesort")
    t_end = t0 + window * n_windows
    i = 0
    while i < n:
        cur = node[order[i]]
        a = start[order[i]]
        b = end[order[i]]
        k = i + 1
        while True:
            if k < n and node[order[k]] == cur and start[order[k]] <= b:
                if end[order[k]] > b:
                    b = end[order[k]]
                k += 1
                continue
            # flush merged segment [a, b)
            lo = max(a, t0)
            hi = min(b, t_end)
            while lo < hi:
                w = (lo - t0) // window
                w_end = t0 + (w + 1) * window
                step = min(hi, w_end) - lo
                out[cur, w] += step
                lo += step
            if k < n and node[order[k]] == cur:
                a = start[order[k]]
                b = end[order[k]]
                k += 1
                continue
            break
        i = k
    return out


# ---------------------------------------------------------------------------
# perception counting
# ---------------------------------------------------------------------------


def vpr_counts_numpy(obs_x, obs_y, obs_id, oth_x, oth_y, oth_id, last_rx, t, radius, validity):
    """Per-observer (aware, in_range) counts.

    ``last_rx[i, j]`` is the latest reception time at observer ``i`` of a
    message from other ``j`` (very negative when none).
    """
    dx = obs_x[:, None] - oth_x[None, :]
    dy = obs_y[:, None] - oth_y[None, :]
    in_range = (dx * dx + dy * dy <= radius * radius) & (obs_id[:, None] != oth_id[None, :])
    fresh = (t - last_rx) <= validity
    aware = in_range & fresh
    return aware.sum(axis=1).astype(np.int64), in_range.sum(axis=1).astype(np.int64)


def _vpr_counts_loop(obs_x, obs_y, obs_id, oth_x, oth_y, oth_id, last_rx, t, radius, validity):
    n = obs_x.shape[0]
    m = oth_x.shape[0]
    aware = np.zeros(n, dtype=np.int64)
    rng = np.zeros(n, dtype=np.int64)
    r2 = radius * radius
    for i in range(n):
        for j in range(m):
            if obs_id[i] == oth_id[j]:
                continue
            dx = obs_x[i] - oth_x[j]
            dy = obs_y[i] - oth_y[j]
            if dx * dx + dy * dy <= r2:
                rng[i] += 1
                if t - last_rx[i, j] <= validity:
                    aware[i] += 1
    return aware, rng


if HAVE_NUMBA:
    interp_tracks_numba = njit(cache=True)(_interp_tracks_loop)
    segments_blocked_numba = njit(cache=True)(_segments_blocked_loop)
    collision_lost_numba = njit(cache=True)(_collision_lost_loop)
    busy_per_window_numba = njit(cache=True)(_busy_per_window_loop)
    vpr_counts_numba = njit(cache=True)(_vpr_counts_loop)
else:  # pragma: no cover
    interp_tracks_numba = _interp_tracks_loop
    segments_blocked_numba = _segments_blocked_loop
    collision_lost_numba = _collision_lost_loop
    busy_per_window_numba = _busy_per_window_loop
    vpr_counts_numba = _vpr_counts_loop

if USE_NUMBA:
    interp_tracks = interp_tracks_numba
    segments_blocked = segments_blocked_numba
    collision_lost = collision_lost_numba
    busy_per_window = busy_per_window_numba
    vpr_counts = vpr_counts_numba
else:
    interp_tracks = interp_tracks_numpy
    segments_blocked = segments_blocked_numpy
    collision_lost = collision_lost_numpy
    busy_per_window = busy_per_window_numpy
    vpr_counts = vpr_counts_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
