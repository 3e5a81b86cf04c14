"""One sparse tensor-core instruction tile, emulated.

A tile multiplies a 2:4-compressed ``m_i x k_i`` operand (``k_i/2`` stored
values plus one 2-bit position per value) by a dense ``k_i x n_i`` operand
and accumulates into ``m_i x n_i``. Products are summed in ascending k,
which is a convention of this emulator, not a claim about hardware.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import CorruptFormat, ShapeError

# (m_i, n_i, k_i); the k16 shape serves sub-rows shorter than 32
PRESETS = {"m16n8k32": (16, 8, 32), "m16n8k16": (16, 8, 16)}
DEFAULT = PRESETS["m16n8k32"]


@dataclass(frozen=True, eq=False)
class InstructionTile:
    a_frag: np.ndarray
    meta_frag: np.ndarray
    b_frag: np.ndarray
    c_frag: np.ndarray
    m_i: int = 16
    n_i: int = 8
    k_i: int = 32

    def with_c(self, c):
        return replace(self, c_frag=c)


def check_tile(t: InstructionTile):
    if (t.m_i, t.n_i, t.k_i) not in PRESETS.values():
        raise ShapeError(f"unsupported instruction shape m{t.m_i}n{t.n_i}k{t.k_i}")
    shapes = {
        "a_frag": (t.m_i, t.k_i // 2),
        "meta_frag": (t.m_i, t.k_i // 2),
        "b_frag": (t.k_i, t.n_i),
        "c_frag": (t.m_i, t.n_i),
    }
    for name, shape in shapes.items():
        got = np.shape(getattr(t, name))
        if tuple(got) != shape:
            raise ShapeError(f"{name} has shape {tuple(got)}, expected {shape}")
    meta = np.asarray(t.meta_frag).astype(np.int64)
    if meta.min() < 0 or meta.max() > 3:
        raise CorruptFormat("metadata code outside [0, 4)")
    pairs = meta.reshape(t.m_i, -1, 2)
    bad = np.argwhere(pairs[:, :, 0] >= pairs[:, :, 1])
    if bad.size:
        r, g = bad[0]
        raise CorruptFormat(f"metadata pair {tuple(pairs[r, g])} at row {r}, unit {g} not increasing")


def expand_fragment(a_frag, meta_frag, k_i: int) -> np.ndarray:
    """Dense ``m_i x k_i`` operand described by a compressed fragment."""
    a = np.asarray(a_frag, dtype=np.float32)
    meta = np.asarray(meta_frag).astype(np.int64)
    cols = (np.arange(a.shape[1]) // 2 * 4)[None, :] + meta
    out = np.zeros((a.shape[0], k_i), dtype=np.float32)
    np.put_along_axis(out, cols, a, axis=1)
    return out


def sp_mma_tile(t: InstructionTile, backend=None) -> np.ndarray:
    """Return ``c_frag + expand(a_frag, meta_frag) @ b_frag`` (inputs untouched)."""
    check_tile(t)
    c = np.array(t.c_frag, dtype=np.float32, copy=True)
    kernels.get(backend).sp_mma(
        c,
        np.ascontiguousarray(t.a_frag, dtype=np.float32),
        np.ascontiguousarray(t.meta_frag, dtype=np.uint8),
        np.ascontiguousarray(t.b_frag, dtype=np.float32),
    )
    return c
