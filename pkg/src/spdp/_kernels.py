"""Numba kernels shared by the sequential and the parallel sampler.

All count arrays are passed as flat 1-D views:

* ``n[d*K + k]``                 doc-topic counts
* ``m[(i*K + k)*V + w]``         customers per (group, topic, word) cell
* ``t[(i*K + k)*V + w]``         tables per cell
* ``mk[i*K + k]``, ``tk[i*K + k]`` per-(group, topic) sums of m and t
* ``Q[k*V + v]``, ``T[k]``        tables associated with base word v / all tables

Table word-associations (``v_lists``) live in a pooled singly linked list:
``head[cell]``/``tail[cell]`` index into ``tab_v``/``tab_next``; free slots are
kept on a stack ``free`` whose height is ``free_top[0]``.

The transformation matrix is CSR over rows ``i*V + w``: ``p_ptr``, ``p_col``,
``p_logval``.  Proposals are laid out in per-topic blocks of ``1 + s`` entries
(``s`` = nonzeros in the row): entry 0 is ``r=0``, entry ``1 + j`` is ``r=1``
with ``v = p_col[p_ptr[row] + j]``.
"""

import numpy as np
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

from .numerics import _categorical, draw_uniform

SLOT_BERNOULLI = 0
SLOT_TABLE = 1
SLOT_CHOICE = 2

# stream ids >= 2**32 * RESERVED are never produced by (iteration, index) keys
_RECONCILE_INDEX = 0xFFFFFFFF
_INIT_ITERATION = 0xFFFFFFFF


@intrinsic
def atomic_add(typingctx, arr, idx, val):
    """``arr[idx] += val`` as one relaxed atomic read-modify-write."""
    if not isinstance(arr, types.Array) or arr.ndim != 1 or not isinstance(arr.dtype, types.Integer):
        return None

    def codegen(context, builder, sig, args):
        aryty = sig.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, aryty, ary, [args[1]], wraparound=False)
        v = context.cast(builder, args[2], sig.args[2], aryty.dtype)
        return builder.atomic_rmw("add", ptr, v, "monotonic")

    return arr.dtype(arr, idx, val), codegen


@njit(cache=True, inline="always")
def stream_key(iteration, index):
    return (np.uint64(iteration) << np.uint64(32)) | np.uint64(index)


@njit(cache=True, inline="always")
def _u(seed, iteration, index, slot):
    return draw_uniform(seed, stream_key(iteration, index), np.uint64(slot))


# ---------------------------------------------------------------- pool ops


@njit(cache=True)
def pool_append(cell, v, head, tail, tab_v, tab_next, free, free_top):
    top = free_top[0] - 1
    if top < 0:
        raise RuntimeError("table pool exhausted")
    j = free[top]
    free_top[0] = top
    tab_v[j] = v
    tab_next[j] = -1
    if tail[cell] < 0:
        head[cell] = j
    else:
        tab_next[tail[cell]] = j
    tail[cell] = j


@njit(cache=True)
def pool_remove_at(cell, idx, head, tail, tab_v, tab_next, free, free_top):
    prev = -1
    cur = head[cell]
    for _ in range(idx):
        prev = cur
        cur = tab_next[cur]
    if cur < 0:
        raise RuntimeError("table index out of range")
    nxt = tab_next[cur]
    if prev < 0:
        head[cell] = nxt
    else:
        tab_next[prev] = nxt
    if tail[cell] == cur:
        tail[cell] = prev
    v = tab_v[cur]
    free[free_top[0]] = cur
    free_top[0] += 1
    return v


@njit(cache=True)
def pool_insert_at(cell, idx, v, head, tail, tab_v, tab_next, free, free_top):
    top = free_top[0] - 1
    j = free[top]
    free_top[0] = top
    tab_v[j] = v
    if idx == 0:
        tab_next[j] = head[cell]
        head[cell] = j
    else:
        prev = head[cell]
        for _ in range(idx - 1):
            prev = tab_next[prev]
        tab_next[j] = tab_next[prev]
        tab_next[prev] = j
    if tab_next[j] < 0:
        tail[cell] = j


@njit(cache=True)
def pool_clear(head, tail, tab_next, free, free_top):
    cap = len(free)
    for j in range(cap):
        free[j] = cap - 1 - j
        tab_next[j] = -1
    free_top[0] = cap
    head[:] = -1
    tail[:] = -1


@njit(cache=True)
def pool_lengths(head, tab_next, out):
    for c in range(len(head)):
        cnt = 0
        j = head[c]
        while j >= 0:
            cnt += 1
            j = tab_next[j]
        out[c] = cnt


# ---------------------------------------------------------------- proposals


@njit(cache=True)
def fill_proposals(
    logw, K, V, i, w, alpha, beta, beta_sum, disc, conc,
    p_ptr, p_col, p_logval,
    loc_n, loc_m, loc_t, loc_mk, loc_tk, loc_T, loc_Q,
    stir, topic_cache,
):
    """Write the unnormalized log-weights for one removed word into ``logw``.

    ``loc_*`` hold the counts of "the rest" per topic; ``loc_Q[k*s + j]`` is
    ``Q[k, v_j]`` for the j-th support column of row ``(i, w)``.  Returns the
    number of entries written.

    A cell left with customers but no tables (possible right after removing a
    table's creator) has zero probability unless the word reopens a table in
    it, so such a topic forces ``r=1`` there.
    """
    row = i * V + w
    lo = p_ptr[row]
    s = p_ptr[row + 1] - lo
    blk = 1 + s
    forced = -1
    for k in range(K):
        if loc_m[k] >= 1 and loc_t[k] == 0:
            forced = k
    for k in range(K):
        base = k * blk
        a = disc[k]
        b = conc[k]
        mc = loc_m[k]
        tc = loc_t[k]
        c = topic_cache[k]
        if forced >= 0 and k != forced:
            for j in range(blk):
                logw[base + j] = -np.inf
            continue
        doc = np.log(alpha[i * K + k] + loc_n[k]) - np.log(b + loc_mk[k])
        if forced >= 0:
            logw[base] = -np.inf
            stir_new = 0.0
        else:
            if tc == 0:
                logw[base] = -np.inf
            else:
                logw[base] = (
                    doc
                    + np.log(mc - tc + 1.0) - np.log(mc + 1.0)
                    + stir[c, mc + 1, tc] - stir[c, mc, tc]
                )
            stir_new = (
                np.log(tc + 1.0) - np.log(mc + 1.0)
                + stir[c, mc + 1, tc + 1] - stir[c, mc, tc]
            )
        open_w = doc + np.log(b + a * loc_tk[k]) - np.log(beta_sum + loc_T[k]) + stir_new
        for j in range(s):
            v = p_col[lo + j]
            logw[base + 1 + j] = p_logval[lo + j] + open_w + np.log(beta[v] + loc_Q[k * s + j])
    return K * blk


@njit(cache=True, inline="always")
def decode_choice(idx, K, V, i, w, p_ptr, p_col):
    row = i * V + w
    lo = p_ptr[row]
    blk = 1 + (p_ptr[row + 1] - lo)
    k = idx // blk
    off = idx - k * blk
    if off == 0:
        return k, 0, -1
    return k, 1, p_col[lo + off - 1]


@njit(cache=True)
def gather_local(
    d, i, w, K, V, n, m, t, mk, tk, Q, T, p_ptr, p_col,
    loc_n, loc_m, loc_t, loc_mk, loc_tk, loc_T, loc_Q,
):
    row = i * V + w
    lo = p_ptr[row]
    s = p_ptr[row + 1] - lo
    for k in range(K):
        cell = (i * K + k) * V + w
        loc_n[k] = n[d * K + k]
        loc_m[k] = m[cell]
        loc_t[k] = t[cell]
        loc_mk[k] = mk[i * K + k]
        loc_tk[k] = tk[i * K + k]
        loc_T[k] = T[k]
        for j in range(s):
            loc_Q[k * s + j] = Q[k * V + p_col[lo + j]]


# ---------------------------------------------------------------- sequential


@njit(cache=True)
def remove_at(
    p, u_bern, u_table, words, doc_of, group_of, z, r, K, V,
    n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
):
    """Take position ``p`` out of the counts.

    Returns ``(sampled r, removed table index, removed v)``; index/v are -1
    when no table was closed.
    """
    w = words[p]
    d = doc_of[p]
    i = group_of[p]
    k = z[p]
    cell = (i * K + k) * V + w
    mc = m[cell]
    tc = t[cell]
    if mc < 1 or tc < 1 or tc > mc or n[d * K + k] < 1:
        raise RuntimeError("inconsistent cell at removal")
    rr = 1 if u_bern * mc < tc else 0
    n[d * K + k] -= 1
    m[cell] -= 1
    mk[i * K + k] -= 1
    idx = -1
    v = -1
    if rr == 1:
        t[cell] -= 1
        tk[i * K + k] -= 1
        idx = min(int(u_table * tc), tc - 1)
        v = pool_remove_at(cell, idx, head, tail, tab_v, tab_next, free, free_top)
        Q[k * V + v] -= 1
        T[k] -= 1
    r[p] = rr
    return rr, idx, v


@njit(cache=True)
def add_at(
    p, k, rr, v, words, doc_of, group_of, z, r, K, V,
    n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
):
    w = words[p]
    d = doc_of[p]
    i = group_of[p]
    cell = (i * K + k) * V + w
    z[p] = k
    r[p] = rr
    n[d * K + k] += 1
    m[cell] += 1
    mk[i * K + k] += 1
    if rr == 1:
        t[cell] += 1
        tk[i * K + k] += 1
        Q[k * V + v] += 1
        T[k] += 1
        pool_append(cell, v, head, tail, tab_v, tab_next, free, free_top)


@njit(cache=True)
def sweep(
    order, seed, iteration,
    words, doc_of, group_of, z, r, K, V,
    n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
    alpha, beta, beta_sum, disc, conc, p_ptr, p_col, p_logval, max_s,
    stir, topic_cache,
):
    """One blocked Gibbs pass over ``order``; visit index keys the draws."""
    logw = np.empty(K * (1 + max_s))
    loc_n = np.empty(K, np.int64)
    loc_m = np.empty(K, np.int64)
    loc_t = np.empty(K, np.int64)
    loc_mk = np.empty(K, np.int64)
    loc_tk = np.empty(K, np.int64)
    loc_T = np.empty(K, np.int64)
    loc_Q = np.empty(K * max_s, np.int64)
    for s_idx in range(len(order)):
        p = order[s_idx]
        remove_at(
            p,
            _u(seed, iteration, s_idx, SLOT_BERNOULLI),
            _u(seed, iteration, s_idx, SLOT_TABLE),
            words, doc_of, group_of, z, r, K, V,
            n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
        )
        w = words[p]
        d = doc_of[p]
        i = group_of[p]
        gather_local(
            d, i, w, K, V, n, m, t, mk, tk, Q, T, p_ptr, p_col,
            loc_n, loc_m, loc_t, loc_mk, loc_tk, loc_T, loc_Q,
        )
        cnt = fill_proposals(
            logw, K, V, i, w, alpha, beta, beta_sum, disc, conc, p_ptr, p_col, p_logval,
            loc_n, loc_m, loc_t, loc_mk, loc_tk, loc_T, loc_Q, stir, topic_cache,
        )
        idx = _categorical(logw, cnt, _u(seed, iteration, s_idx, SLOT_CHOICE))
        k, rr, v = decode_choice(idx, K, V, i, w, p_ptr, p_col)
        add_at(
            p, k, rr, v, words, doc_of, group_of, z, r, K, V,
            n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
        )


@njit(cache=True)
def reconcile_r(seed, iteration, words, group_of, z, r, K, V, m, t):
    """Redraw table indicators uniformly given the table counts.

    Given ``m`` customers and ``t`` tables in a cell, every placement of the
    ``t`` creator flags is equally likely, so selection sampling over the
    cell's positions in corpus order is an exact conditional draw.
    """
    rem = m.copy()
    need = t.copy()
    changed = 0
    for p in range(len(words)):
        cell = (group_of[p] * K + z[p]) * V + words[p]
        u = _u(seed, iteration, _RECONCILE_INDEX, p)
        new = 0
        if u * rem[cell] < need[cell]:
            new = 1
            need[cell] -= 1
        rem[cell] -= 1
        if new != r[p]:
            changed += 1
        r[p] = new
    return changed


@njit(cache=True)
def init_state(
    seed, words, doc_of, group_of, z, r, K, V,
    n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
    beta, beta_sum, disc, conc, p_ptr, p_col, p_logval, max_s,
):
    """Uniform topics, then one seating pass with the generative PDP rule."""
    N = len(words)
    for p in range(N):
        z[p] = min(int(_u(seed, _INIT_ITERATION, p, 0) * K), K - 1)
    wts = np.empty(max_s)
    for p in range(N):
        w = words[p]
        d = doc_of[p]
        i = group_of[p]
        k = z[p]
        cell = (i * K + k) * V + w
        row = i * V + w
        lo = p_ptr[row]
        s = p_ptr[row + 1] - lo
        # base-measure mass of w and the per-column open weights
        h = 0.0
        for j in range(s):
            v = p_col[lo + j]
            wts[j] = np.exp(p_logval[lo + j]) * (beta[v] + Q[k * V + v]) / (beta_sum + T[k])
            h += wts[j]
        rr = 1
        if m[cell] > 0:
            a = disc[k]
            p_new = (conc[k] + a * tk[i * K + k]) * h
            p_join = m[cell] - a * t[cell]
            if _u(seed, _INIT_ITERATION, p, 1) * (p_new + p_join) >= p_new:
                rr = 0
        v = -1
        if rr == 1:
            target = _u(seed, _INIT_ITERATION, p, 2) * h
            acc = 0.0
            for j in range(s):
                acc += wts[j]
                v = p_col[lo + j]
                if target < acc:
                    break
        add_at(
            p, k, rr, v, words, doc_of, group_of, z, r, K, V,
            n, m, t, mk, tk, Q, T, head, tail, tab_v, tab_next, free, free_top,
        )


# ---------------------------------------------------------------- parallel


@njit(cache=True, nogil=True)
def parallel_positions(
    positions, sched_idx, seed, iteration,
    words, doc_of, group_of, z, r, K, V,
    n, m, t, mk, tk, Q, T,
    alpha, beta, beta_sum, disc, conc, p_ptr, p_col, p_logval, max_s,
    stir, topic_cache,
):
    """Workgroup loop run by one worker over its share of a wave.

    Every word snapshots the counts it needs, clamps the snapshot into its
    valid range, and commits its removal and its new assignment with per-cell
    atomic adds.  Other workers may observe or overwrite in between.
    """
    logw = np.empty(K * (1 + max_s))
    loc_n = np.empty(K, np.int64)
    loc_m = np.empty(K, np.int64)
    loc_t = np.empty(K, np.int64)
    loc_mk = np.empty(K, np.int64)
    loc_tk = np.empty(K, np.int64)
    loc_T = np.empty(K, np.int64)
    loc_Q = np.empty(K * max_s, np.int64)
    clamps = 0
    for q in range(len(positions)):
        p = positions[q]
        s_idx = sched_idx[q]
        w = words[p]
        d = doc_of[p]
        i = group_of[p]
        k0 = z[p]
        gather_local(
            d, i, w, K, V, n, m, t, mk, tk, Q, T, p_ptr, p_col,
            loc_n, loc_m, loc_t, loc_mk, loc_tk, loc_T, loc_Q,
        )
        row = i * V + w
        s = p_ptr[row + 1] - p_ptr[row]
        for k in range(K):
            lo_n = 1 if k == k0 else 0
            if loc_n[k] < lo_n:
                loc_n[k] = lo_n
                clamps += 1
            if loc_m[k] < lo_n:
                loc_m[k] = lo_n
                clamps += 1
            lo_t = 1 if loc_m[k] >= 1 else 0
            if loc_t[k] > loc_m[k]:
                loc_t[k] = loc_m[k]
                clamps += 1
            elif loc_t[k] < lo_t:
                loc_t[k] = lo_t
                clamps += 1
            if loc_mk[k] < loc_m[k]:
                loc_mk[k] = loc_m[k]
                clamps += 1
            if loc_tk[k] < loc_t[k]:
                loc_tk[k] = loc_t[k]
                clamps += 1
            elif loc_tk[k] > loc_mk[k]:
                loc_tk[k] = loc_mk[k]
                clamps += 1
            if loc_T[k] < 0:
                loc_T[k] = 0
                clamps += 1
            for j in range(s):
                if loc_Q[k * s + j] < 0:
                    loc_Q[k * s + j] = 0
                    clamps += 1
            # identity rows only: every table in the cell serves w itself
            if loc_Q[k * s] < loc_t[k]:
                loc_Q[k * s] = loc_t[k]
                clamps += 1
            if loc_T[k] < loc_Q[k * s]:
                loc_T[k] = loc_Q[k * s]
                clamps += 1
            if loc_T[k] < loc_tk[k]:
                loc_T[k] = loc_tk[k]
                clamps += 1
        # removal, decided on the local copy and committed atomically
        rr = 1 if _u(seed, iteration, s_idx, SLOT_BERNOULLI) * loc_m[k0] < loc_t[k0] else 0
        cell0 = (i * K + k0) * V + w
        loc_n[k0] -= 1
        loc_m[k0] -= 1
        loc_mk[k0] -= 1
        atomic_add(n, d * K + k0, -1)
        atomic_add(m, cell0, -1)
        atomic_add(mk, i * K + k0, -1)
        if rr == 1:
            loc_t[k0] -= 1
            loc_tk[k0] -= 1
            loc_T[k0] -= 1
            loc_Q[k0 * s] -= 1
            atomic_add(t, cell0, -1)
            atomic_add(tk, i * K + k0, -1)
            atomic_add(Q, k0 * V + w, -1)
            atomic_add(T, k0, -1)
        cnt = fill_proposals(
            logw, K, V, i, w, alpha, beta, beta_sum, disc, conc, p_ptr, p_col, p_logval,
            loc_n, loc_m, loc_t, loc_mk, loc_tk, loc_T, loc_Q, stir, topic_cache,
        )
        idx = _categorical(logw, cnt, _u(seed, iteration, s_idx, SLOT_CHOICE))
        if idx < 0:
            # no finite weight survived the clamped snapshot: reopen in k0
            idx = k0 * (1 + s) + 1
            clamps += 1
        k, rnew, v = decode_choice(idx, K, V, i, w, p_ptr, p_col)
        cell = (i * K + k) * V + w
        z[p] = k
        r[p] = rnew
        atomic_add(n, d * K + k, 1)
        atomic_add(m, cell, 1)
        atomic_add(mk, i * K + k, 1)
        if rnew == 1:
            atomic_add(t, cell, 1)
            atomic_add(tk, i * K + k, 1)
            atomic_add(Q, k * V + v, 1)
            atomic_add(T, k, 1)
    return clamps


# ---------------------------------------------------------------- fold-in


@njit(cache=True)
def fold_in_doc(doc_words, phi, alpha_row, K, iterations, seed, stream):
    """z-only Gibbs over one held-out document with frozen word-topic rows.

    ``phi`` is ``(K, V)``.  The first iteration seats tokens one at a time;
    later ones remove and resample.  Returns the doc-topic counts.
    """
    L = len(doc_words)
    counts = np.zeros(K, np.int64)
    zz = np.full(L, -1, np.int64)
    wts = np.empty(K)
    ctr = 0
    for it in range(iterations):
        for l in range(L):
            w = doc_words[l]
            if zz[l] >= 0:
                counts[zz[l]] -= 1
            total = 0.0
            for k in range(K):
                wts[k] = (alpha_row[k] + counts[k]) * phi[k, w]
                total += wts[k]
            u = draw_uniform(seed, stream, np.uint64(ctr)) * total
            ctr += 1
            acc = 0.0
            knew = K - 1
            for k in range(K):
                acc += wts[k]
                if u < acc:
                    knew = k
                    break
            zz[l] = knew
            counts[knew] += 1
    return counts


# ---------------------------------------------------------------- host repairs


@njit(cache=True)
def pool_q(head, tab_next, tab_v, K, V, Q):
    """Recount ``Q[k*V + v]`` from the table lists."""
    Q[:] = 0
    for c in range(len(head)):
        k = (c // V) % K
        j = head[c]
        while j >= 0:
            Q[k * V + tab_v[j]] += 1
            j = tab_next[j]


@njit(cache=True)
def pool_support_ok(head, tab_next, tab_v, K, V, p_ptr, p_col):
    """First cell holding a table outside its row's support, or -1."""
    for c in range(len(head)):
        w = c % V
        i = c // (K * V)
        row = i * V + w
        j = head[c]
        while j >= 0:
            v = tab_v[j]
            hit = False
            for q in range(p_ptr[row], p_ptr[row + 1]):
                if p_col[q] == v:
                    hit = True
            if not hit:
                return c
            j = tab_next[j]
    return -1


@njit(cache=True)
def fix_indicators(cells, r, t_flat):
    """Minimal flips, in position order, so each cell's flags add up to ``t``."""
    need = -t_flat.copy()
    for p in range(len(cells)):
        need[cells[p]] += r[p]
    flips = 0
    for p in range(len(cells)):
        c = cells[p]
        if need[c] > 0 and r[p] == 1:
            r[p] = 0
            need[c] -= 1
            flips += 1
        elif need[c] < 0 and r[p] == 0:
            r[p] = 1
            need[c] += 1
            flips += 1
    return flips
