"""Compiled grid kernels: ray traversal, segment traversal and the FMM solve.

All kernels work in cell units on ``(row, col)`` arrays where x runs along
columns and y along rows.
"""

import math

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True, inline='always')
def _first_crossing(p, d):
    """Return (step, t_max, t_delta) for one axis of a DDA walk."""
    cell = math.floor(p)
    if d > 0.0:
        return 1, (cell + 1.0 - p) / d, 1.0 / d
    if d < 0.0:
        return -1, (p - cell) / -d, 1.0 / -d
    return 0, INF, INF


@njit(cache=True)
def cast_rays(obstacle, labels, px, py, angles, max_range):
    """Walk every ray through the grid until the first obstacle cell.

    ``px``/``py`` are the origin in cell units (x = column axis), ``max_range``
    is in cells. Returns per-ray ``hit_dist``, ``hit_label``, ``hit_flag`` and
    the traversed-cell samples as ``(ray, dist, label, is_hit, row, col)``
    arrays, where each sample distance is the midpoint of the ray's segment
    inside that cell.
    """
    n = angles.shape[0]
    h, w = obstacle.shape
    cap = n * (2 * int(math.ceil(max_range)) + 4)
    s_ray = np.empty(cap, np.int64)
    s_dist = np.empty(cap, np.float64)
    s_label = np.empty(cap, np.int64)
    s_hit = np.empty(cap, np.bool_)
    s_row = np.empty(cap, np.int64)
    s_col = np.empty(cap, np.int64)
    hit_dist = np.full(n, max_range)
    hit_label = np.zeros(n, np.int64)
    hit_flag = np.zeros(n, np.bool_)
    k = 0
    for r in range(n):
        dx = math.cos(angles[r])
        dy = math.sin(angles[r])
        if abs(dx) < 1e-12:
            dx = 0.0
        if abs(dy) < 1e-12:
            dy = 0.0
        ix = int(math.floor(px))
        iy = int(math.floor(py))
        sx, tx, ddx = _first_crossing(px, dx)
        sy, ty, ddy = _first_crossing(py, dy)
        t0 = 0.0
        while t0 < max_range:
            if ix < 0 or iy < 0 or ix >= w or iy >= h:
                break
            t1 = min(tx, ty)
            t_end = min(t1, max_range)
            if obstacle[iy, ix]:
                hit_dist[r] = t0
                hit_label[r] = labels[iy, ix]
                hit_flag[r] = True
                s_ray[k] = r
                s_dist[k] = 0.5 * (t0 + t_end)
                s_label[k] = labels[iy, ix]
                s_hit[k] = True
                s_row[k] = iy
                s_col[k] = ix
                k += 1
                break
            if t_end - t0 > 1e-9:
                s_ray[k] = r
                s_dist[k] = 0.5 * (t0 + t_end)
                s_label[k] = labels[iy, ix]
                s_hit[k] = False
                s_row[k] = iy
                s_col[k] = ix
                k += 1
            if tx < ty:
                ix += sx
                tx += ddx
            else:
                iy += sy
                ty += ddy
            t0 = t1
    return hit_dist, hit_label, hit_flag, s_ray[:k], s_dist[:k], s_label[:k], s_hit[:k], s_row[:k], s_col[:k]


@njit(cache=True)
def segment_cells(x0, y0, x1, y1):
    """Cells (row, col) crossed by the segment from (x0, y0) to (x1, y1)."""
    dx = x1 - x0
    dy = y1 - y0
    length = math.sqrt(dx * dx + dy * dy)
    ix = int(math.floor(x0))
    iy = int(math.floor(y0))
    ex = int(math.floor(x1))
    ey = int(math.floor(y1))
    cap = int(2 * math.ceil(length) + 4)
    out = np.empty((cap, 2), np.int64)
    out[0, 0] = iy
    out[0, 1] = ix
    k = 1
    if length == 0.0:
        return out[:1]
    ux = dx / length
    uy = dy / length
    if abs(ux) < 1e-12:
        ux = 0.0
    if abs(uy) < 1e-12:
        uy = 0.0
    sx, tx, ddx = _first_crossing(x0, ux)
    sy, ty, ddy = _first_crossing(y0, uy)
    while (ix != ex or iy != ey) and k < cap:
        if min(tx, ty) >= length:
            break
        if tx < ty:
            ix += sx
            tx += ddx
        else:
            iy += sy
            ty += ddy
        out[k, 0] = iy
        out[k, 1] = ix
        k += 1
    return out[:k]


@njit(cache=True, inline='always')
def _solve_pair(a, b, h):
    # first-order upwind update from two orthogonal neighbours with spacing h
    if a == INF and b == INF:
        return INF
    if a == INF:
        return b + h
    if b == INF:
        return a + h
    if abs(a - b) >= h:
        return min(a, b) + h
    return 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) * (a - b)))


@njit(cache=True, inline='always')
def _update(T, S, r, c, h):
    # T and S are padded by one cell; T holds inf for cells not yet accepted and
    # S is the slowness (inf on obstacles and on the padding ring).
    s = S[r, c]
    a = min(T[r, c - 1], T[r, c + 1])
    b = min(T[r - 1, c], T[r + 1, c])
    axis = _solve_pair(a, b, h * s)
    # a diagonal neighbour only counts when both cells flanking the corner are
    # free, so the front never squeezes between two touching obstacle corners
    n_ok = S[r - 1, c] != INF
    s_ok = S[r + 1, c] != INF
    w_ok = S[r, c - 1] != INF
    e_ok = S[r, c + 1] != INF
    nw = T[r - 1, c - 1] if (n_ok and w_ok) else INF
    se = T[r + 1, c + 1] if (s_ok and e_ok) else INF
    ne = T[r - 1, c + 1] if (n_ok and e_ok) else INF
    sw = T[r + 1, c - 1] if (s_ok and w_ok) else INF
    diag = _solve_pair(min(nw, se), min(ne, sw), 1.4142135623730951 * h * s)
    return min(axis, diag)


@njit(cache=True, inline='always')
def _sift_up(keys, cells, where, i):
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        cells[parent], cells[i] = cells[i], cells[parent]
        where[cells[i]] = i
        where[cells[parent]] = parent
        i = parent


@njit(cache=True, inline='always')
def _sift_down(keys, cells, where, i, n):
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        child = left
        if left + 1 < n and keys[left + 1] < keys[left]:
            child = left + 1
        if keys[i] <= keys[child]:
            break
        keys[child], keys[i] = keys[i], keys[child]
        cells[child], cells[i] = cells[i], cells[child]
        where[cells[i]] = i
        where[cells[child]] = child
        i = child


@njit(cache=True)
def fmm_solve(slowness, goal_r, goal_c, h):
    """Eight-neighbour first-order fast marching from a single source.

    ``slowness`` is travel time per unit length (``inf`` marks obstacles).
    The update takes the smaller of the axis-aligned and diagonal stencils, so
    the result never exceeds the eight-connected graph distance (diagonal
    moves that cut an obstacle corner are excluded on both sides).
    """
    rows, cols = slowness.shape
    pc = cols + 2
    # accepted values live in a padded array so stencil reads need no bounds checks
    known_t = np.full((rows + 2, pc), INF)
    padded_s = np.full((rows + 2, pc), INF)
    padded_s[1:-1, 1:-1] = slowness
    trial = np.full((rows, cols), INF)
    keys = np.empty(rows * cols, np.float64)
    cells = np.empty(rows * cols, np.int64)
    where = np.full(rows * cols, -1, np.int64)
    trial[goal_r, goal_c] = 0.0
    keys[0] = 0.0
    cells[0] = goal_r * cols + goal_c
    where[cells[0]] = 0
    n = 1
    while n > 0:
        idx = cells[0]
        t = keys[0]
        where[idx] = -2
        n -= 1
        if n > 0:
            keys[0] = keys[n]
            cells[0] = cells[n]
            where[cells[0]] = 0
            _sift_down(keys, cells, where, 0, n)
        r = idx // cols
        c = idx % cols
        known_t[r + 1, c + 1] = t
        for dr in range(-1, 2):
            nr = r + dr
            if nr < 0 or nr >= rows:
                continue
            for dc in range(-1, 2):
                nc = c + dc
                if nc < 0 or nc >= cols:
                    continue
                j = nr * cols + nc
                if where[j] == -2 or slowness[nr, nc] == INF:
                    continue
                cand = _update(known_t, padded_s, nr + 1, nc + 1, h)
                if cand < trial[nr, nc]:
                    trial[nr, nc] = cand
                    i = where[j]
                    if i < 0:
                        i = n
                        n += 1
                        cells[i] = j
                        where[j] = i
                    keys[i] = cand
                    _sift_up(keys, cells, where, i)
    return known_t[1:-1, 1:-1].copy()


@njit(cache=True)
def bfs_from_sources(traversable, sources):
    """Four-connected hop counts to the nearest source cell; -1 where unreachable."""
    rows, cols = traversable.shape
    dist = np.full((rows, cols), -1, np.int64)
    queue = np.empty(rows * cols, np.int64)
    head = 0
    tail = 0
    for r in range(rows):
        for c in range(cols):
            if sources[r, c] and traversable[r, c]:
                dist[r, c] = 0
                queue[tail] = r * cols + c
                tail += 1
    while head < tail:
        idx = queue[head]
        head += 1
        r = idx // cols
        c = idx % cols
        for k in range(4):
            nr = r + (k == 0) - (k == 1)
            nc = c + (k == 2) - (k == 3)
            if 0 <= nr < rows and 0 <= nc < cols and traversable[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue[tail] = nr * cols + nc
                tail += 1
    return dist


@njit(cache=True)
def bfs_hops(traversable, start_r, start_c):
    """Four-connected hop counts from a start cell; -1 where unreachable."""
    sources = np.zeros(traversable.shape, np.bool_)
    sources[start_r, start_c] = True
    return bfs_from_sources(traversable, sources)


@njit(cache=True)
def directional_nearest(m, dr, dc, reach):
    """Label and step count of the nearest non-zero cell in direction (dr, dc).

    Cells with nothing observed within ``reach`` steps get label 0 and
    distance 0.
    """
    h, w = m.shape
    lab = np.zeros((h, w), np.int64)
    dist = np.zeros((h, w), np.int64)
    r_range = range(h - 1, -1, -1) if dr > 0 else range(h)
    c_range = range(w - 1, -1, -1) if dc > 0 else range(w)
    for r in r_range:
        for c in c_range:
            nr = r + dr
            nc = c + dc
            if nr < 0 or nc < 0 or nr >= h or nc >= w:
                continue
            if m[nr, nc] != 0:
                lab[r, c] = m[nr, nc]
                dist[r, c] = 1
            elif dist[nr, nc] > 0 and dist[nr, nc] < reach:
                lab[r, c] = lab[nr, nc]
                dist[r, c] = dist[nr, nc] + 1
    return lab, dist


@njit(cache=True)
def pack_context_keys(m, radius, mid, reach):
    """One byte per compass direction: nearest observed label << 2 | distance bucket.

    Buckets: 0 nothing within ``reach``, 1 within ``radius``, 2 within ``mid``,
    3 within ``reach``. Direction d occupies bits 8d..8d+7.
    """
    h, w = m.shape
    keys = np.zeros((h, w), np.uint64)
    drs = (-1, -1, 0, 1, 1, 1, 0, -1)
    dcs = (0, 1, 1, 1, 0, -1, -1, -1)
    for d in range(8):
        lab, dist = directional_nearest(m, drs[d], dcs[d], reach)
        shift = np.uint64(8 * d)
        for r in range(h):
            for c in range(w):
                k = dist[r, c]
                if k == 0:
                    b = 0
                elif k <= radius:
                    b = 1
                elif k <= mid:
                    b = 2
                else:
                    b = 3
                keys[r, c] |= np.uint64((lab[r, c] << 2) | b) << shift
    return keys


@njit(cache=True)
def scatter_last(out, unseen, flat, labels):
    """Write ``labels`` at ``flat`` indices in order (later writes win) and clear ``unseen``."""
    for i in range(flat.size):
        out[flat[i]] = labels[i]
        unseen[flat[i]] = 0
