"""Vectorised numpy kernels with the same tile traversal as the numba ones.

Each k_b chunk updates the whole block tile at once, one compressed position
at a time, so per-element accumulation order (ascending k) matches the
numba path.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import erf

NONE, SILU, GELU, RELU = 0, 1, 2, 3


def activate(x, act):
    x = np.asarray(x, dtype=np.float64)
    if act == SILU:
        return x / (1.0 + np.exp(-x))
    if act == GELU:
        return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
    if act == RELU:
        return np.where(x > 0.0, x, 0.0)
    return x


def sp_mma(c, a, meta, b):
    """c += expand(a, meta) @ b, in place, ascending k per element."""
    half = a.shape[1]
    kk = (np.arange(half) >> 1) * 4 + meta.astype(np.int64)
    for p in range(half):
        c += a[:, p, None] * b[kk[:, p], :]


def mma(c, a, b):
    for p in range(a.shape[1]):
        c += a[:, p, None] * b[p, :]


def shuffle(acc, c_ir, idx, count, n_keep, m_blk):
    # distinct destinations within one call, so a fancy-indexed add is safe
    dst = np.arange(count) // n_keep * m_blk + idx[:count].astype(np.int64)
    c_ir[dst] += acc[:count]
    acc[:count] = 0.0


def _run_tiles(n_tiles, body, threads):
    if threads <= 1 or n_tiles <= 1:
        for tile in range(n_tiles):
            body(tile)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(body, range(n_tiles)))


def spmm_sparse(data, meta, indices, n_keep, m_blk, v, xtok, rows,
                mb, nb, kb, mw, nw, mi, ni, ki, num_pipe,
                act, wacc, weights, dest, dest_rows, out, threads=1):
    R = data.shape[0]
    T, K = xtok.shape
    n_mt = -(-R // mb)
    n_nt = -(-T // nb)
    nk = K // kb
    period = v // kb
    half = kb // 2
    lrows = mb // n_keep * m_blk

    def body(tile):
        it, jt = divmod(tile, n_nt)
        r_lo, t_lo = it * mb, jt * nb
        rcount = min(mb, R - r_lo)
        tcount = min(nb, T - t_lo)
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
                abuf[s, :rcount] = data[r_lo:r_lo + rcount, h0:h0 + half]
                mbuf[s, :rcount] = meta[r_lo:r_lo + rcount, h0:h0 + half]
                bbuf[s, :, :tcount] = xtok[t_lo:t_lo + tcount, fetch * kb:(fetch + 1) * kb].T
                fetch += 1
            if comp > 0 and comp % period == 0:
                col = comp * kb // v - 1
                shuffle(acc, cir, indices[r_lo:r_lo + rcount, col], rcount, n_keep, m_blk)
            s = comp % num_pipe
            # all instruction tiles of the block at once
            sp_mma(acc, abuf[s], mbuf[s], bbuf[s])
        if nk > 0:
            shuffle(acc, cir, indices[r_lo:r_lo + rcount, K // v - 1], rcount, n_keep, m_blk)
        row0 = r_lo // n_keep * m_blk
        nrow = max(0, min(lrows, rows - row0))
        vals = cir[:nrow, :tcount]
        if act != NONE:
            vals = activate(vals, act).astype(np.float32)
        if wacc:
            tok = slice(t_lo, t_lo + tcount)
            dest[dest_rows[tok], row0:row0 + nrow] += weights[tok, None] * vals.T
        else:
            out[t_lo:t_lo + tcount, row0:row0 + nrow] = vals.T

    _run_tiles(n_mt * n_nt, body, threads)


def spmm_dense(a, xtok, mb, nb, kb, mw, nw, mi, ni, ki, num_pipe, out, threads=1):
    M = a.shape[0]
    T, K = xtok.shape
    n_mt = -(-M // mb)
    n_nt = -(-T // nb)
    nk = K // kb

    def body(tile):
        it, jt = divmod(tile, n_nt)
        r_lo, t_lo = it * mb, jt * nb
        rcount = min(mb, M - r_lo)
        tcount = min(nb, T - t_lo)
        acc = np.zeros((mb, nb), dtype=np.float32)
        bbuf = np.zeros((kb, nb), dtype=np.float32)
        abuf = np.zeros((mb, kb), dtype=np.float32)
        for comp in range(nk):
            abuf[:rcount] = a[r_lo:r_lo + rcount, comp * kb:(comp + 1) * kb]
            bbuf[:, :tcount] = xtok[t_lo:t_lo + tcount, comp * kb:(comp + 1) * kb].T
            mma(acc, abuf, bbuf)
        out[t_lo:t_lo + tcount, r_lo:r_lo + rcount] = acc[:rcount, :tcount].T

    _run_tiles(n_mt * n_nt, body, threads)
