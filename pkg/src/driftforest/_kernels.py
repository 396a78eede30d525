"""Compiled inner loops. Every kernel draws exactly one uniform per step and
maps it to a step code with the same rule as ``numpy.searchsorted(cdf, u,
side="right")``, so compiled and pure-numpy samplers agree draw for draw."""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def draw_code(rng, cdf):
    u = rng.random()
    k = 0
    while u >= cdf[k]:
        k += 1
    return k


@nb.njit(cache=True)
def walk_positions(rng, cdf, deltas, start, nsteps):
    dim = start.shape[0]
    out = np.empty((nsteps + 1, dim), dtype=np.int64)
    out[0] = start
    for m in range(nsteps):
        k = draw_code(rng, cdf)
        for j in range(dim):
            out[m + 1, j] = out[m, j] + deltas[k, j]
    return out


@nb.njit(cache=True)
def level_hitting_time(rng, cdf, n0, level, max_steps):
    """First step at which the drifted coordinate equals ``level``, or -1."""
    n = n0
    if n == level:
        return 0
    for m in range(1, max_steps + 1):
        k = draw_code(rng, cdf)
        if k == 0:
            n += 1
        elif k == 1:
            n -= 1
        if n == level:
            return m
    return -1


@nb.njit(cache=True)
def level_visit_count(rng, cdf, n0, level, max_steps):
    """Number of indices ``0 <= m <= max_steps`` with drifted coordinate ``level``."""
    n = n0
    count = 1 if n == level else 0
    for _ in range(max_steps):
        k = draw_code(rng, cdf)
        if k == 0:
            n += 1
        elif k == 1:
            n -= 1
        if n == level:
            count += 1
    return count


@nb.njit(cache=True)
def ct_level_passage(rng, cdf, n0, level, max_jumps):
    """Continuous time at which the drifted coordinate first equals ``level``.

    Returns ``(time, jumps)``; ``time`` is ``inf`` if ``max_jumps`` ran out.
    """
    n = n0
    t = 0.0
    if n == level:
        return 0.0, 0
    for j in range(1, max_jumps + 1):
        t += rng.standard_exponential()
        k = draw_code(rng, cdf)
        if k == 0:
            n += 1
        elif k == 1:
            n -= 1
        if n == level:
            return t, j
    return np.inf, max_jumps


@nb.njit(cache=True)
def loop_erase_ids(ids):
    """Chronological loop erasure of a path of dense integer vertex ids.

    Returns the indices (into ``ids``) of the retained visits. ``pos[v]`` holds
    the position of ``v`` in the growing erased path, or -1.
    """
    nmax = 0
    for v in ids:
        if v > nmax:
            nmax = v
    pos = np.full(nmax + 1, -1, dtype=np.int64)
    keep = np.empty(ids.shape[0], dtype=np.int64)
    top = 0
    for m in range(ids.shape[0]):
        v = ids[m]
        p = pos[v]
        if p >= 0:
            # erase the loop: everything after the earlier visit of v
            for j in range(p + 1, top):
                pos[ids[keep[j]]] = -1
            top = p + 1
            keep[p] = m
        else:
            pos[v] = top
            keep[top] = m
            top += 1
    return keep[:top]


@nb.njit(cache=True)
def restricted_visits(rng, cdf, deltas, start, lo, hi, target, horizon):
    """Visits to ``target`` before the walk leaves the box ``[lo, hi]``.

    ``horizon < 0`` means no step limit. Returns ``(visits, steps, exited,
    final_level)``.
    """
    dim = start.shape[0]
    pos = start.copy()
    visits = 0
    m = 0
    while True:
        inside = True
        for j in range(dim):
            if pos[j] < lo[j] or pos[j] > hi[j]:
                inside = False
                break
        if not inside:
            return visits, m, True, pos[0]
        same = True
        for j in range(dim):
            if pos[j] != target[j]:
                same = False
                break
        if same:
            visits += 1
        if horizon >= 0 and m >= horizon:
            return visits, m, False, pos[0]
        k = draw_code(rng, cdf)
        for j in range(dim):
            pos[j] += deltas[k, j]
        m += 1


@nb.njit(cache=True)
def coupled_walks(rng, sel_cdf, law_cdf, a0, b0, max_steps, stop_at_coupling):
    """Lazy walks coupled one coordinate at a time; see ``walk.sample_coupled_pair``.

    Returns ``(path_a, path_b, tau)`` with ``tau = -1`` if not coupled.
    """
    dim = a0.shape[0]
    pa = np.empty((max_steps + 1, dim), dtype=np.int64)
    pb = np.empty((max_steps + 1, dim), dtype=np.int64)
    pa[0] = a0
    pb[0] = b0
    active = -1
    for j in range(dim):
        if a0[j] != b0[j]:
            active = j
            break
    tau = 0 if active < 0 else -1
    m = 0
    while m < max_steps:
        if tau >= 0 and stop_at_coupling:
            break
        f = draw_code(rng, sel_cdf)
        sa = draw_code(rng, law_cdf[f]) - 1
        if f == active:
            sb = draw_code(rng, law_cdf[f]) - 1
        else:
            sb = sa
        pa[m + 1] = pa[m]
        pb[m + 1] = pb[m]
        pa[m + 1, f] += sa
        pb[m + 1, f] += sb
        m += 1
        if f == active and pa[m, f] == pb[m, f]:
            active = -1
            for j in range(dim):
                if pa[m, j] != pb[m, j]:
                    active = j
                    break
            if active < 0:
                tau = m
    return pa[: m + 1], pb[: m + 1], tau


# Vertex table: a hash map from a 64-bit row hash to an index into a coordinate
# array. Distinct rows with equal hashes are detected on insert, never merged.

HASH_MULT = np.array(
    [
        0x9E3779B97F4A7C15,
        0xC2B2AE3D27D4EB4F,
        0x165667B19E3779F9,
        0xD6E8FEB86659FD93,
        0xFF51AFD7ED558CCD,
        0xC4CEB9FE1A85EC53,
        0x94D049BB133111EB,
        0xBF58476D1CE4E5B9,
        0x2545F4914F6CDD1D,
        0x85EBCA77C2B2AE63,
        0x27D4EB2F165667C5,
        0xA0761D6478BD642F,
    ],
    dtype=np.uint64,
)


@nb.njit(cache=True)
def row_hash(row):
    h = np.uint64(0x243F6A8885A308D3)
    for j in range(row.shape[0]):
        h = (h ^ np.uint64(row[j])) * HASH_MULT[j % HASH_MULT.shape[0]]
        h ^= h >> np.uint64(29)
    return np.int64(h)


@nb.njit(cache=True)
def table_lookup(table, coords, row):
    h = row_hash(row)
    if h not in table:
        return -1
    idx = table[h]
    for j in range(row.shape[0]):
        if coords[idx, j] != row[j]:
            return -1
    return idx


@nb.njit(cache=True)
def table_lookup_rows(table, coords, rows):
    out = np.empty(rows.shape[0], dtype=np.int64)
    for i in range(rows.shape[0]):
        out[i] = table_lookup(table, coords, rows[i])
    return out


@nb.njit(cache=True)
def table_insert(table, coords, n_used, rows):
    """Insert rows not yet present; returns the new fill count, or -1 on a collision."""
    for i in range(rows.shape[0]):
        row = rows[i]
        h = row_hash(row)
        if h in table:
            idx = table[h]
            for j in range(row.shape[0]):
                if coords[idx, j] != row[j]:
                    return -1
            continue
        coords[n_used] = row
        table[h] = n_used
        n_used += 1
    return n_used


@nb.njit(cache=True)
def walk_until_hit(rng, cdf, deltas, start, horizon, table, coords):
    """Walk from ``start`` until it sits on a tabled vertex or takes ``horizon`` steps.

    Returns ``(positions, hit_index)``; ``hit_index`` is the table index of the
    vertex hit, or -1 if the walk was truncated.
    """
    dim = start.shape[0]
    cap = 1024 if horizon > 1024 else horizon + 1
    out = np.empty((cap, dim), dtype=np.int64)
    out[0] = start
    idx = table_lookup(table, coords, out[0])
    m = 0
    while idx < 0 and m < horizon:
        if m + 1 >= cap:
            cap = min(2 * cap, horizon + 1)
            grown = np.empty((cap, dim), dtype=np.int64)
            grown[: m + 1] = out[: m + 1]
            out = grown
        k = draw_code(rng, cdf)
        for j in range(dim):
            out[m + 1, j] = out[m, j] + deltas[k, j]
        m += 1
        idx = table_lookup(table, coords, out[m])
    return out[: m + 1], idx


@nb.njit(cache=True)
def first_visit(rng, cdf, deltas, start, target, horizon):
    """Step index of the first visit to ``target`` within ``horizon``, or -1."""
    dim = start.shape[0]
    pos = start.copy()
    for m in range(horizon + 1):
        same = True
        for j in range(dim):
            if pos[j] != target[j]:
                same = False
                break
        if same:
            return m
        if m == horizon:
            break
        k = draw_code(rng, cdf)
        for j in range(dim):
            pos[j] += deltas[k, j]
    return -1


@nb.njit(cache=True)
def wilson_batch(rng, nbr, cdf, order, samples):
    """Wilson's algorithm on a finite graph, ``samples`` times.

    ``nbr[v, k]`` is the k-th neighbour of ``v`` (-1 for the root) and
    ``cdf[v]`` the cumulative move law. Returns parent indices, -1 for root.
    """
    nv = nbr.shape[0]
    out = np.empty((samples, nv), dtype=np.int64)
    in_tree = np.empty(nv, dtype=np.bool_)
    nxt = np.empty(nv, dtype=np.int64)
    for s in range(samples):
        in_tree[:] = False
        for v in order:
            u = v
            while u >= 0 and not in_tree[u]:
                nxt[u] = nbr[u, draw_code(rng, cdf[u])]
                u = nxt[u]
            u = v
            while u >= 0 and not in_tree[u]:
                in_tree[u] = True
                out[s, u] = nxt[u]
                u = nxt[u]
    return out
