"""Compiled kernels for walks on hash-generated quasi-trees.

A component is named by a 64-bit key. The component entered through the
long-range edge at vertex type ``v`` of component ``k`` has key
``child_key(k, v)`` and center type ``child_type(child_key(k, v), v)``,
uniform over the side opposite to ``v``. The walk keeps the stack of
components on its root path: ``keys[d]``, ``centers[d]`` and ``ptypes[d]``
(the parent vertex type the component hangs from, -1 at the root).

Uniforms come from a SplitMix64 stream so that every replica is a pure
function of its seed.
"""
from __future__ import annotations

import numba
import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
TYPE_SALT = 0xD1B54A32D192ED03
CHILD_SALT = 0x632BE59BD9B4E019

OK = 1
FAIL = 0
REJECTED = -1


def mix64_py(z: int) -> int:
    z = (z + GOLDEN) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def child_key_py(key: int, vtype: int) -> int:
    return mix64_py(key ^ mix64_py((vtype + CHILD_SALT) & MASK))


def child_type_py(key: int, parent_type: int, n: int) -> int:
    u = mix64_py(key ^ TYPE_SALT) % n
    return u + n if parent_type < n else u


def root_key_py(env_seed: int) -> int:
    return mix64_py(env_seed & MASK)


def root_type_py(env_seed: int, n: int) -> int:
    return mix64_py(root_key_py(env_seed) ^ TYPE_SALT) % (2 * n)


def uniform_py(state: int) -> tuple[float, int]:
    """Next uniform in [0, 1) and the advanced stream state."""
    state = (state + GOLDEN) & MASK
    z = mix64_py((state - GOLDEN) & MASK)
    return (z >> 11) * (1.0 / (1 << 53)), state


@numba.njit(cache=True)
def mix64(z):
    z = z + np.uint64(GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def child_key(key, vtype):
    return mix64(key ^ mix64(np.uint64(vtype) + np.uint64(CHILD_SALT)))


@numba.njit(cache=True)
def child_type(key, parent_type, n):
    u = np.int64(mix64(key ^ np.uint64(TYPE_SALT)) % np.uint64(n))
    return u + n if parent_type < n else u


@numba.njit(cache=True)
def next_uniform(state):
    """Advance ``state`` (a length-1 uint64 array) and return a uniform in [0, 1)."""
    state[0] = state[0] + np.uint64(GOLDEN)
    z = mix64(state[0] - np.uint64(GOLDEN))
    return np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def base_step(x, u, indptr, indices, cum):
    lo, hi = indptr[x], indptr[x + 1]
    j = lo + np.searchsorted(cum[lo:hi], u, side="right")
    if j >= hi:
        j = hi - 1
    return indices[j]


@numba.njit(cache=True)
def partner_type(cur, depth, keys, centers, ptypes, n):
    if cur == centers[depth] and ptypes[depth] >= 0:
        return ptypes[depth]
    return child_type(child_key(keys[depth], cur), cur, n)


@numba.njit(cache=True)
def cross(cur, depth, keys, centers, ptypes, n):
    """Move across the long-range edge at ``cur``; returns (new type, new depth, went_down).

    Callers handle a crossing to the parent at depth 0 themselves.
    """
    if cur == centers[depth] and ptypes[depth] >= 0:
        return ptypes[depth], depth - 1, False
    k = child_key(keys[depth], cur)
    c = child_type(k, cur, n)
    depth += 1
    keys[depth] = k
    centers[depth] = c
    ptypes[depth] = cur
    return c, depth, True


@numba.njit(cache=True)
def trajectory(weight, indptr, indices, cum, n, root_key, root_type, ticks, seed):
    """Walk of ``ticks`` half-steps from the root.

    Returns per-state arrays (types, depths, comp keys) of length ticks + 1 and
    crossing events (tick, key, lower depth, went_down, from type).
    """
    keys = np.empty(ticks + 2, dtype=np.uint64)
    centers = np.empty(ticks + 2, dtype=np.int64)
    ptypes = np.empty(ticks + 2, dtype=np.int64)
    keys[0] = root_key
    centers[0] = root_type
    ptypes[0] = -1
    types = np.empty(ticks + 1, dtype=np.int64)
    depths = np.empty(ticks + 1, dtype=np.int64)
    comps = np.empty(ticks + 1, dtype=np.uint64)
    ev_tick = np.empty(ticks, dtype=np.int64)
    ev_key = np.empty(ticks, dtype=np.uint64)
    ev_depth = np.empty(ticks, dtype=np.int64)
    ev_down = np.empty(ticks, dtype=np.bool_)
    ev_from = np.empty(ticks, dtype=np.int64)
    n_ev = 0
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    cur = root_type
    depth = 0
    types[0] = cur
    depths[0] = 0
    comps[0] = root_key
    for i in range(ticks):
        u = next_uniform(state)
        if i % 2 == 0:
            b = partner_type(cur, depth, keys, centers, ptypes, n)
            stay = weight[cur] / (weight[cur] + weight[b])
            if u >= stay:
                old_key = keys[depth]
                new, depth2, down = cross(cur, depth, keys, centers, ptypes, n)
                ev_tick[n_ev] = i
                ev_key[n_ev] = keys[depth2] if down else old_key
                ev_depth[n_ev] = depth2 if down else depth
                ev_down[n_ev] = down
                ev_from[n_ev] = cur
                n_ev += 1
                cur = new
                depth = depth2
        else:
            cur = base_step(cur, u, indptr, indices, cum)
        types[i + 1] = cur
        depths[i + 1] = depth
        comps[i + 1] = keys[depth]
    return types, depths, comps, ev_tick[:n_ev], ev_key[:n_ev], ev_depth[:n_ev], ev_down[:n_ev], ev_from[:n_ev]


@numba.njit(cache=True)
def regenerations(depths, ev_tick, ev_key, ev_depth, ev_down, ev_from, cert):
    """Edges crossed exactly once, with certification by a later depth advance of ``cert``.

    Returns (tick, new depth, from type, certified) per record in time order.
    """
    m = len(ev_tick)
    T = len(depths)
    # suffix minimum and suffix maximum of the depth
    smin = np.empty(T, dtype=np.int64)
    smax = np.empty(T, dtype=np.int64)
    smin[T - 1] = depths[T - 1]
    smax[T - 1] = depths[T - 1]
    for i in range(T - 2, -1, -1):
        smin[i] = min(depths[i], smin[i + 1])
        smax[i] = max(depths[i], smax[i + 1])
    order = np.argsort(ev_depth, kind="mergesort")
    keep = np.zeros(m, dtype=np.bool_)
    for e in range(m):
        if ev_down[e] and smin[ev_tick[e] + 1] >= ev_depth[e]:
            keep[e] = True
    # an edge crossed more than once is not a regeneration: count same-key events per depth
    start = 0
    while start < m:
        d = ev_depth[order[start]]
        stop = start
        while stop < m and ev_depth[order[stop]] == d:
            stop += 1
        for a in range(start, stop):
            e = order[a]
            if keep[e]:
                count = 0
                for b in range(start, stop):
                    if ev_key[order[b]] == ev_key[e]:
                        count += 1
                if count > 1:
                    keep[e] = False
        start = stop
    n_out = 0
    for e in range(m):
        if keep[e]:
            n_out += 1
    out_tick = np.empty(n_out, dtype=np.int64)
    out_depth = np.empty(n_out, dtype=np.int64)
    out_from = np.empty(n_out, dtype=np.int64)
    out_cert = np.empty(n_out, dtype=np.bool_)
    j = 0
    for e in range(m):
        if keep[e]:
            out_tick[j] = ev_tick[e]
            out_depth[j] = ev_depth[e]
            out_from[j] = ev_from[e]
            out_cert[j] = smax[ev_tick[e] + 1] >= ev_depth[e] + cert
            j += 1
    return out_tick, out_depth, out_from, out_cert


@numba.njit(cache=True)
def factor_run(weight, indptr, indices, cum, dist, n, key0, center0, ptype0, start, target,
               radius, backtrack, conditional, state, keys, centers, ptypes, max_ticks):
    """One run for a weight factor.

    Unconditional runs start at whole time at ``start`` in the root component and
    fail on deviation. Conditional runs start at half time at the center
    ``start`` and are rejected if they cross back to the parent; a deviated
    conditional run continues and can only fail.
    Success: relative depth ``backtrack`` reached (without deviation) with ``target`` as the
    depth-1 component.
    """
    keys[0] = key0
    centers[0] = center0
    ptypes[0] = ptype0
    cur = start
    depth = 0
    deviated = False
    first = 1 if conditional else 0
    for i in range(first, max_ticks):
        u = next_uniform(state)
        if i % 2 == 0:
            b = partner_type(cur, depth, keys, centers, ptypes, n)
            stay = weight[cur] / (weight[cur] + weight[b])
            if u >= stay:
                if depth == 0 and conditional and cur == center0:
                    return REJECTED
                cur, depth, _ = cross(cur, depth, keys, centers, ptypes, n)
                if depth >= backtrack:
                    if deviated:
                        return FAIL
                    return OK if keys[1] == target else FAIL
        else:
            cur = base_step(cur, u, indptr, indices, cum)
            if dist[centers[depth], cur] >= radius:
                if not conditional:
                    return FAIL
                deviated = True
    return FAIL


@numba.njit(cache=True)
def factor_estimate(weight, indptr, indices, cum, dist, n, key0, center0, ptype0, start, target,
                    radius, backtrack, conditional, budget, seed, max_ticks):
    """(hits, denominator) over ``budget`` runs."""
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    keys = np.empty(backtrack + 2, dtype=np.uint64)
    centers = np.empty(backtrack + 2, dtype=np.int64)
    ptypes = np.empty(backtrack + 2, dtype=np.int64)
    hits = 0
    base = 0
    for _ in range(budget):
        r = factor_run(weight, indptr, indices, cum, dist, n, key0, center0, ptype0, start, target,
                       radius, backtrack, conditional, state, keys, centers, ptypes, max_ticks)
        if r == REJECTED:
            continue
        base += 1
        if r == OK:
            hits += 1
    return hits, base


@numba.njit(cache=True)
def escape_runs(weight, indptr, indices, cum, n, key0, center0, ptype0, start, at_center, half_start,
                horizon, samples, seed):
    """Number of runs that stay inside the subquasi-tree of ``start`` for ``horizon`` whole steps.

    A non-center start must cross to its child center at the first half-step
    and never cross back. A center start (``at_center``) must never cross to
    its parent; with ``half_start`` the run begins with the small-range step.
    """
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    cap = 2 * horizon + 2
    keys = np.empty(cap + 1, dtype=np.uint64)
    centers = np.empty(cap + 1, dtype=np.int64)
    ptypes = np.empty(cap + 1, dtype=np.int64)
    first = 1 if (at_center and half_start) else 0
    good = 0
    for _ in range(samples):
        keys[0] = key0
        centers[0] = center0
        ptypes[0] = ptype0
        cur = start
        depth = 0
        ok = True
        for i in range(first, 2 * horizon + first):
            u = next_uniform(state)
            if i % 2 == 0:
                b = partner_type(cur, depth, keys, centers, ptypes, n)
                stay = weight[cur] / (weight[cur] + weight[b])
                if u >= stay:
                    if at_center and depth == 0 and cur == center0:
                        ok = False
                        break
                    cur, depth, _ = cross(cur, depth, keys, centers, ptypes, n)
                    if not at_center and depth == 0:
                        ok = False
                        break
                elif i == 0 and not at_center:
                    ok = False
                    break
            else:
                cur = base_step(cur, u, indptr, indices, cum)
        if ok:
            good += 1
    return good


@numba.njit(cache=True)
def capped_distances(indptr, indices, cap):
    """Small-range distances, with everything beyond ``cap`` stored as cap + 1."""
    m = len(indptr) - 1
    dist = np.full((m, m), cap + 1, dtype=np.uint8)
    queue = np.empty(m, dtype=np.int64)
    for s in range(m):
        dist[s, s] = 0
        head, tail = 0, 1
        queue[0] = s
        while head < tail:
            v = queue[head]
            head += 1
            dv = dist[s, v]
            if dv >= cap:
                continue
            for j in range(indptr[v], indptr[v + 1]):
                w = indices[j]
                if dist[s, w] > dv + 1:
                    dist[s, w] = dv + 1
                    queue[tail] = w
                    tail += 1
    return dist


@numba.njit(cache=True)
def walk_snapshot(weight, indptr, indices, cum, n, root_key, root_type, ticks, snap, seed,
                  snap_keys, snap_centers, snap_ptypes):
    """Walk of ``ticks`` half-steps that also copies the component stack at tick ``snap``.

    Returns (depths, events..., depth at snap); the snapshot arrays are filled in place.
    """
    keys = np.empty(ticks + 2, dtype=np.uint64)
    centers = np.empty(ticks + 2, dtype=np.int64)
    ptypes = np.empty(ticks + 2, dtype=np.int64)
    keys[0] = root_key
    centers[0] = root_type
    ptypes[0] = -1
    depths = np.empty(ticks + 1, dtype=np.int64)
    ev_tick = np.empty(ticks, dtype=np.int64)
    ev_key = np.empty(ticks, dtype=np.uint64)
    ev_depth = np.empty(ticks, dtype=np.int64)
    ev_down = np.empty(ticks, dtype=np.bool_)
    ev_from = np.empty(ticks, dtype=np.int64)
    n_ev = 0
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    cur = root_type
    depth = 0
    depths[0] = 0
    snap_depth = 0
    for i in range(ticks + 1):
        if i == snap:
            snap_depth = depth
            for d in range(depth + 1):
                snap_keys[d] = keys[d]
                snap_centers[d] = centers[d]
                snap_ptypes[d] = ptypes[d]
        if i == ticks:
            break
        u = next_uniform(state)
        if i % 2 == 0:
            b = partner_type(cur, depth, keys, centers, ptypes, n)
            stay = weight[cur] / (weight[cur] + weight[b])
            if u >= stay:
                old_key = keys[depth]
                new, depth2, down = cross(cur, depth, keys, centers, ptypes, n)
                ev_tick[n_ev] = i
                ev_key[n_ev] = keys[depth2] if down else old_key
                ev_depth[n_ev] = depth2 if down else depth
                ev_down[n_ev] = down
                ev_from[n_ev] = cur
                n_ev += 1
                cur = new
                depth = depth2
        else:
            cur = base_step(cur, u, indptr, indices, cum)
        depths[i + 1] = depth
    return (depths, ev_tick[:n_ev], ev_key[:n_ev], ev_depth[:n_ev], ev_down[:n_ev], ev_from[:n_ev], snap_depth)


@numba.njit(cache=True)
def last_certified(tick_limit, r_tick, r_depth, r_cert):
    """Index of the last certified record with crossing tick < tick_limit, or -1."""
    best = -1
    for j in range(len(r_tick)):
        if r_tick[j] < tick_limit and r_cert[j]:
            best = j
    return best


@numba.njit(cache=True)
def drift_replica(weight, indptr, indices, cum, n, root_key, root_type, ticks, ext, cert, seed):
    """(depth at ticks, half-tick of last certified regeneration (+1), its level) for one replica."""
    sk = np.empty(ticks + ext + 2, dtype=np.uint64)
    sc = np.empty(ticks + ext + 2, dtype=np.int64)
    sp = np.empty(ticks + ext + 2, dtype=np.int64)
    depths, et, ek, ed, edown, efrom, sd = walk_snapshot(weight, indptr, indices, cum, n, root_key, root_type,
                                                         ticks + ext, ticks, seed, sk, sc, sp)
    rt, rd, rf, rc = regenerations(depths, et, ek, ed, edown, efrom, cert)
    j = last_certified(ticks, rt, rd, rc)
    if j < 0:
        return depths[ticks], 0, 0
    return depths[ticks], rt[j] + 1, rd[j]


@numba.njit(cache=True)
def entropy_replica(weight, indptr, indices, cum, dist, n, root_key, root_type, ticks, ext, cert,
                    radius, backtrack, budget, seed, max_ticks, floor, logs):
    """Per-factor -log weights of the trace at ``ticks`` (written into ``logs``).

    Returns (trace length, half-tick of the last certified regeneration (+1), its level).
    """
    sk = np.empty(ticks + ext + 2, dtype=np.uint64)
    sc = np.empty(ticks + ext + 2, dtype=np.int64)
    sp = np.empty(ticks + ext + 2, dtype=np.int64)
    depths, et, ek, ed, edown, efrom, k = walk_snapshot(weight, indptr, indices, cum, n, root_key, root_type,
                                                        ticks + ext, ticks, seed, sk, sc, sp)
    rt, rd, rf, rc = regenerations(depths, et, ek, ed, edown, efrom, cert)
    j = last_certified(ticks, rt, rd, rc)
    for i in range(1, k + 1):
        inner_seed = mix64(seed ^ mix64(np.uint64(i) * np.uint64(GOLDEN)))
        if i == 1:
            hits, base = factor_estimate(weight, indptr, indices, cum, dist, n, sk[0], sc[0], sp[0], sc[0],
                                         sk[1], radius, backtrack, False, budget, inner_seed, max_ticks)
        else:
            hits, base = factor_estimate(weight, indptr, indices, cum, dist, n, sk[i - 1], sc[i - 1],
                                         sp[i - 1], sc[i - 1], sk[i], radius, backtrack, True, budget, inner_seed, max_ticks)
        p = hits / base if base > 0 else 0.0
        logs[i - 1] = -np.log(max(p, floor))
    if j < 0:
        return k, 0, 0
    return k, rt[j] + 1, rd[j]


@numba.njit(parallel=True, cache=True)
def drift_batch(weight, indptr, indices, cum, n, root_keys, root_types, ticks, ext, cert, seeds):
    m = len(seeds)
    depth = np.empty(m, dtype=np.int64)
    rtime = np.empty(m, dtype=np.int64)
    rlevel = np.empty(m, dtype=np.int64)
    for r in numba.prange(m):
        depth[r], rtime[r], rlevel[r] = drift_replica(weight, indptr, indices, cum, n, root_keys[r], root_types[r],
                                                      ticks, ext, cert, seeds[r])
    return depth, rtime, rlevel


@numba.njit(parallel=True, cache=True)
def entropy_batch(weight, indptr, indices, cum, dist, n, root_keys, root_types, ticks, ext, cert, radius, backtrack,
                  budget, seeds, max_ticks, floor):
    m = len(seeds)
    total = np.zeros(m)
    prefix = np.zeros(m)
    floored = np.zeros(m, dtype=np.int64)
    cut = -np.log(floor) - 1e-12
    length = np.empty(m, dtype=np.int64)
    rtime = np.empty(m, dtype=np.int64)
    rlevel = np.empty(m, dtype=np.int64)
    for r in numba.prange(m):
        logs = np.zeros(ticks + 1)
        k, rt, rl = entropy_replica(weight, indptr, indices, cum, dist, n, root_keys[r], root_types[r], ticks,
                                    ext, cert, radius, backtrack, budget, seeds[r], max_ticks, floor, logs)
        length[r] = k
        rtime[r] = rt
        rlevel[r] = rl
        s = 0.0
        for i in range(k):
            s += logs[i]
            if logs[i] >= cut:
                floored[r] += 1
            if i + 1 == rl:
                prefix[r] = s
        total[r] = s
    return total, length, prefix, rtime, rlevel, floored


@numba.njit(parallel=True, cache=True)
def escape_batch(weight, indptr, indices, cum, n, root_keys, root_types, horizon, samples, seeds):
    """Root escape counts, one environment per entry."""
    m = len(seeds)
    out = np.empty(m, dtype=np.int64)
    for r in numba.prange(m):
        out[r] = escape_runs(weight, indptr, indices, cum, n, root_keys[r], root_types[r], -1, root_types[r],
                             False, False, horizon, samples, seeds[r])
    return out


@numba.njit(cache=True)
def regen_replica(weight, indptr, indices, cum, n, root_key, root_type, ticks, cert, seed):
    """Regeneration records of one replica: (half-tick of crossing, level, from type, certified)."""
    sk = np.empty(ticks + 2, dtype=np.uint64)
    sc = np.empty(ticks + 2, dtype=np.int64)
    sp = np.empty(ticks + 2, dtype=np.int64)
    depths, et, ek, ed, edown, efrom, _ = walk_snapshot(weight, indptr, indices, cum, n, root_key, root_type,
                                                        ticks, 0, seed, sk, sc, sp)
    return regenerations(depths, et, ek, ed, edown, efrom, cert)


@numba.njit(parallel=True, cache=True)
def regen_first_k(weight, indptr, indices, cum, n, root_keys, root_types, ticks, cert, k, seeds):
    """First ``k`` certified regenerations per replica; ``count`` says how many were found."""
    m = len(seeds)
    out_tick = np.full((m, k), -1, dtype=np.int64)
    out_depth = np.full((m, k), -1, dtype=np.int64)
    out_from = np.full((m, k), -1, dtype=np.int64)
    count = np.zeros(m, dtype=np.int64)
    for r in numba.prange(m):
        rt, rd, rf, rc = regen_replica(weight, indptr, indices, cum, n, root_keys[r], root_types[r], ticks, cert,
                                       seeds[r])
        c = 0
        for j in range(len(rt)):
            if c == k:
                break
            if rc[j]:
                out_tick[r, c] = rt[j]
                out_depth[r, c] = rd[j]
                out_from[r, c] = rf[j]
                c += 1
        count[r] = c
    return out_tick, out_depth, out_from, count
