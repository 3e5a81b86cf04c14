"""numba kernels.

Accumulation order for every output element is ascending k; tiles only change
which elements are visited together, so results are bitwise identical across
tile configurations and thread counts. ``fastmath`` stays off on purpose:
contraction into FMA or reassociation would break that.

Inner helpers take whole C-contiguous buffers plus offsets and index them
with unsigned integers: a signed offset forces a negative-index wraparound
check per access, which stops the token loop from vectorising.
"""

import math

import numpy as np
from numba import njit, prange

NONE, SILU, GELU, RELU = 0, 1, 2, 3


@njit(cache=True)
def sp_mma_at(c, r0, c0, a, meta, p0, b, mi, half, width):
    """c[r0:r0+mi, c0:c0+width] += expand(a[:, p0:p0+half], meta) @ b[:, c0:c0+width].

    ``b`` is indexed by logical column, so compressed position ``p`` reads
    row ``p // 2 * 4 + meta``. Two 4-groups are applied per pass over the
    token strip; the parenthesised sum keeps the ascending-k order.
    """
    end = p0 + half
    for r in range(mi):
        rr = np.uint64(r0 + r)
        p = p0
        while p + 4 <= end:
            base = (p >> 1) * 4
            a0 = a[rr, p]
            a1 = a[rr, p + 1]
            a2 = a[rr, p + 2]
            a3 = a[rr, p + 3]
            k0 = np.uint64(base + meta[rr, p])
            k1 = np.uint64(base + meta[rr, p + 1])
            k2 = np.uint64(base + 4 + meta[rr, p + 2])
            k3 = np.uint64(base + 4 + meta[rr, p + 3])
            for t in range(width):
                tt = np.uint64(c0 + t)
                c[rr, tt] = (((c[rr, tt] + a0 * b[k0, tt]) + a1 * b[k1, tt]) + a2 * b[k2, tt]) + a3 * b[k3, tt]
            p += 4
        while p < end:
            av = a[rr, p]
            kk = np.uint64((p >> 1) * 4 + meta[rr, p])
            for t in range(width):
                tt = np.uint64(c0 + t)
                c[rr, tt] += av * b[kk, tt]
            p += 1


@njit(cache=True)
def sp_mma(c, a, meta, b):
    """c += expand(a, meta) @ b for one instruction tile."""
    sp_mma_at(c, 0, 0, a, meta, 0, b, a.shape[0], a.shape[1], c.shape[1])


@njit(cache=True)
def mma_at(c, r0, c0, a, k0, b, mi, kd, width):
    end = k0 + kd
    for r in range(mi):
        rr = np.uint64(r0 + r)
        p = k0
        while p + 4 <= end:
            a0 = a[rr, p]
            a1 = a[rr, p + 1]
            a2 = a[rr, p + 2]
            a3 = a[rr, p + 3]
            q = np.uint64(p)
            for t in range(width):
                tt = np.uint64(c0 + t)
                c[rr, tt] = (((c[rr, tt] + a0 * b[q, tt]) + a1 * b[q + 1, tt]) + a2 * b[q + 2, tt]) + a3 * b[q + 3, tt]
            p += 4
        while p < end:
            av = a[rr, p]
            q = np.uint64(p)
            for t in range(width):
                tt = np.uint64(c0 + t)
                c[rr, tt] += av * b[q, tt]
            p += 1


@njit(cache=True)
def mma(c, a, b):
    mma_at(c, 0, 0, a, 0, b, a.shape[0], a.shape[1], c.shape[1])


@njit(cache=True)
def shuffle(acc, c_ir, idx, count, n_keep, m_blk):
    """Route sub-row partial sums into their output rows, then clear them."""
    nt = acc.shape[1]
    for r in range(count):
        dst = (r // n_keep) * m_blk + idx[r]
        for t in range(nt):
            c_ir[dst, t] += acc[r, t]
            acc[r, t] = 0.0


@njit(cache=True)
def _activate(x, act):
    if act == SILU:
        return x / (1.0 + math.exp(-x))
    if act == GELU:
        return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))
    if act == RELU:
        return x if x > 0.0 else 0.0
    return x


@njit(cache=True)
def _store(cir, nrow, row0, rows, t_lo, tcount, act, wacc, weights, dest, dest_rows, out):
    for lr in range(nrow):
        g = row0 + lr
        if g >= rows:
            break
        for t in range(tcount):
            val = _activate(np.float64(cir[lr, t]), act)
            if wacc:
                tok = t_lo + t
                dest[dest_rows[tok], g] += np.float32(weights[tok] * np.float32(val))
            else:
                out[t_lo + t, g] = val


@njit(parallel=True, cache=True)
def spmm_sparse(data, meta, indices, n_keep, m_blk, v, xtok, rows,
                mb, nb, kb, mw, nw, mi, ni, ki, num_pipe,
                act, wacc, weights, dest, dest_rows, out):
    R = data.shape[0]
    T = xtok.shape[0]
    K = xtok.shape[1]
    n_mt = (R + mb - 1) // mb
    n_nt = (T + nb - 1) // nb
    nk = K // kb
    period = v // kb
    half = kb // 2
    lrows = mb // n_keep * m_blk
    for tile in prange(n_mt * n_nt):
        it = tile // n_nt
        jt = tile % n_nt
        r_lo = it * mb
        t_lo = jt * nb
        rcount = min(mb, R - r_lo)
        tcount = min(nb, T - t_lo)
        # fetch-stage ring buffers (shared-memory analog), zero padded at edges
        abuf = np.zeros((num_pipe, mb, half), dtype=np.float32)
        mbuf = np.zeros((num_pipe, mb, half), dtype=np.uint8)
        bbuf = np.zeros((num_pipe, kb, nb), dtype=np.float32)
        acc = np.zeros((mb, nb), dtype=np.float32)
        cir = np.zeros((lrows, nb), dtype=np.float32)
        fetch = 0
        for comp in range(nk):
            while fetch < comp + num_pipe and fetch < nk:
                s = fetch % num_pipe
                h0 = fetch * half
                k0 = fetch * kb
                for r in range(rcount):
                    for p in range(half):
                        abuf[s, r, p] = data[r_lo + r, h0 + p]
                        mbuf[s, r, p] = meta[r_lo + r, h0 + p]
                for t in range(tcount):
                    for q in range(kb):
                        bbuf[s, q, t] = xtok[t_lo + t, k0 + q]
                fetch += 1
            if comp > 0 and comp % period == 0:
                col = (comp * kb) // v - 1
                shuffle(acc, cir, indices[r_lo:r_lo + rcount, col], rcount, n_keep, m_blk)
            s = comp % num_pipe
            a_s = abuf[s]
            m_s = mbuf[s]
            b_s = bbuf[s]
            for wr in range(0, mb, mw):
                for wc in range(0, nb, nw):
                    # the n_w / n_i instruction tiles of one warp row share
                    # their A fragment and are issued as one strip
                    for ir in range(wr, wr + mw, mi):
                        for q in range(0, kb, ki):
                            sp_mma_at(acc, ir, wc, a_s, m_s, q // 2, b_s, mi, ki // 2, nw)
        if nk > 0:
            shuffle(acc, cir, indices[r_lo:r_lo + rcount, K // v - 1], rcount, n_keep, m_blk)
        _store(cir, lrows, r_lo // n_keep * m_blk, rows, t_lo, tcount,
               act, wacc, weights, dest, dest_rows, out)


@njit(parallel=True, cache=True)
def spmm_dense(a, xtok, mb, nb, kb, mw, nw, mi, ni, ki, num_pipe, out):
    """Same tiling and pipeline over a dense weight (the dense-pattern baseline)."""
    M = a.shape[0]
    T = xtok.shape[0]
    K = xtok.shape[1]
    n_mt = (M + mb - 1) // mb
    n_nt = (T + nb - 1) // nb
    nk = K // kb
    for tile in prange(n_mt * n_nt):
        it = tile // n_nt
        jt = tile % n_nt
        r_lo = it * mb
        t_lo = jt * nb
        rcount = min(mb, M - r_lo)
        tcount = min(nb, T - t_lo)
        abuf = np.zeros((num_pipe, mb, kb), dtype=np.float32)
        bbuf = np.zeros((num_pipe, kb, nb), dtype=np.float32)
        acc = np.zeros((mb, nb), dtype=np.float32)
        fetch = 0
        for comp in range(nk):
            while fetch < comp + num_pipe and fetch < nk:
                s = fetch % num_pipe
                k0 = fetch * kb
                for r in range(rcount):
                    for q in range(kb):
                        abuf[s, r, q] = a[r_lo + r, k0 + q]
                for t in range(tcount):
                    for q in range(kb):
                        bbuf[s, q, t] = xtok[t_lo + t, k0 + q]
                fetch += 1
            s = comp % num_pipe
            a_s = abuf[s]
            b_s = bbuf[s]
            for wr in range(0, mb, mw):
                for wc in range(0, nb, nw):
                    for ir in range(wr, wr + mw, mi):
                        for q in range(0, kb, ki):
                            mma_at(acc, ir, wc, a_s, q, b_s, mi, ki, nw)
        for r in range(rcount):
            for t in range(tcount):
                out[t_lo + t, r_lo + r] = acc[r, t]
