"""Dual-side sparse representation.

Weights use (n, m, v) sub-row sparsity composed with 2:4 element sparsity:
every ``m x v`` block keeps ``n`` sub-rows, and every aligned group of 4
elements inside a kept sub-row keeps 2 values. An encoded weight is the
triple (data, indices, metadata):

* ``data``     -- ``(rows*n/m, cols/2)`` float32, kept values in order
* ``indices``  -- ``(rows*n/m, cols/v)`` uint8, sub-row slot inside its block
* ``metadata`` -- ``(rows*n/m, cols/2)`` uint8 2-bit codes, position in the 4-group

Row ``r`` of the compressed matrices belongs to block ``r // n``; within a
block column the ``n`` recorded sub-row indices are strictly increasing.

Activations use a selection array: only the listed columns (tokens) of the
logical ``k x total_cols`` matrix are stored, one column per data row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptFormat, PatternError, SelectionError, ShapeError

SCALAR = np.float32
GROUP = 4  # SpTC unit width
KEEP = 2  # values kept per unit


@dataclass(frozen=True)
class SparseFormatConfig:
    n: int
    m: int
    v: int
    element_pattern: str = field(default="2:4", compare=False)

    def __post_init__(self):
        if self.element_pattern != "2:4":
            raise ValueError(f"only the 2:4 element pattern is supported, got {self.element_pattern!r}")
        if not (1 <= self.n <= self.m):
            raise ValueError(f"need 1 <= n <= m, got n={self.n}, m={self.m}")
        if self.m > 255:
            raise ValueError("m must fit in one byte")
        if self.v <= 0 or self.v % GROUP:
            raise ValueError(f"v must be a positive multiple of 4, got {self.v}")

    @property
    def density(self) -> float:
        """Fraction of weight elements stored."""
        return self.n / self.m * KEEP / GROUP

    @property
    def sparsity(self) -> float:
        return 1.0 - self.density

    def __str__(self):
        return f"({self.n},{self.m},{self.v})"

    @classmethod
    def parse(cls, text: str) -> "SparseFormatConfig":
        parts = [int(p) for p in text.strip("() ").split(",")]
        if len(parts) != 3:
            raise ValueError(f"expected n,m,v, got {text!r}")
        return cls(*parts)


# sparse configurations evaluated for accuracy
PRESETS = {
    "1-2-16": SparseFormatConfig(1, 2, 16),
    "1-2-32": SparseFormatConfig(1, 2, 32),
    "4-8-32": SparseFormatConfig(4, 8, 32),
    "8-16-32": SparseFormatConfig(8, 16, 32),
}


def compressed_rows(rows: int, cfg: SparseFormatConfig) -> int:
    return rows // cfg.m * cfg.n


@dataclass(frozen=True, eq=False)
class SamoyedsWeight:
    rows: int
    cols: int
    config: SparseFormatConfig
    data: np.ndarray
    indices: np.ndarray
    metadata: np.ndarray

    @property
    def shape(self):
        return (self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, SamoyedsWeight):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and self.config == other.config
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.metadata, other.metadata)
        )

    def nbytes(self) -> dict:
        """Storage of each component under the serialized layout."""
        codes = self.metadata.size
        return {
            "data": int(self.data.size * 4),
            "indices": int(self.indices.size),
            "metadata": int(-(-codes // 4)),
        }

    def column_index(self) -> np.ndarray:
        """Logical column of every stored value, shape of ``data``."""
        unit = np.arange(self.cols // 2, dtype=np.int64) // KEEP
        return unit * GROUP + self.metadata.astype(np.int64)


@dataclass(frozen=True, eq=False)
class SelectedInput:
    """Column-selected activation stored token-major (one row per selected column)."""

    k: int
    total_cols: int
    sel: np.ndarray
    data: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, SelectedInput):
            return NotImplemented
        return (
            self.k == other.k
            and self.total_cols == other.total_cols
            and np.array_equal(self.sel, other.sel)
            and np.array_equal(self.data, other.data)
        )

    def __len__(self):
        return len(self.sel)

    def expand(self) -> np.ndarray:
        """Logical ``k x total_cols`` matrix with unselected columns zero."""
        out = np.zeros((self.k, self.total_cols), dtype=self.data.dtype)
        out[:, self.sel] = self.data.T
        return out

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, sel, total_cols: int | None = None) -> "SelectedInput":
        """Build from a token-major ``(total_cols, k)`` activation without transposing."""
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ShapeError(f"expected 2-D activation, got {tokens.ndim}-D")
        total = tokens.shape[0] if total_cols is None else total_cols
        sel = _check_sel(sel, total)
        data = np.ascontiguousarray(tokens[sel], dtype=SCALAR)
        return cls(k=tokens.shape[1], total_cols=total, sel=sel, data=data)


def _check_sel(sel, total_cols: int) -> np.ndarray:
    sel = np.asarray(sel, dtype=np.int64).reshape(-1)
    if sel.size:
        if sel[0] < 0 or sel[-1] >= total_cols:
            raise SelectionError(f"selection out of range [0, {total_cols})")
        if np.any(np.diff(sel) <= 0):
            raise SelectionError("selection must be strictly increasing")
    return sel


def compress_input(x: np.ndarray, sel) -> SelectedInput:
    """Keep columns ``sel`` of the logical ``k x cols`` matrix ``x``."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"expected 2-D matrix, got {x.ndim}-D")
    sel = _check_sel(sel, x.shape[1])
    data = np.ascontiguousarray(x[:, sel].T, dtype=SCALAR)
    return SelectedInput(k=x.shape[0], total_cols=x.shape[1], sel=sel, data=data)


def _check_divisible(rows: int, cols: int, cfg: SparseFormatConfig):
    if rows % cfg.m or cols % cfg.v:
        raise ShapeError(
            f"shape not divisible: {rows}x{cols} needs rows % {cfg.m} == 0 and cols % {cfg.v} == 0"
        )


def _first_k_true(flags: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Positions of the first ``k`` True entries along ``axis``, padded with the lowest False ones, ascending."""
    order = np.argsort(~flags, axis=axis, kind="stable")
    picked = np.take(order, np.arange(k), axis=axis)
    return np.sort(picked, axis=axis)


def encode_weight(w: np.ndarray, cfg: SparseFormatConfig) -> SamoyedsWeight:
    """Encode a pattern-conforming dense weight."""
    w = np.asarray(w)
    if w.ndim != 2:
        raise ShapeError(f"expected 2-D weight, got {w.ndim}-D")
    rows, cols = w.shape
    _check_divisible(rows, cols, cfg)
    w = w.astype(SCALAR, copy=False)
    nb, nc = rows // cfg.m, cols // cfg.v
    blocks = w.reshape(nb, cfg.m, nc, cfg.v)

    live = (blocks != 0).any(axis=3)  # (nb, m, nc)
    over = live.sum(axis=1) > cfg.n
    if over.any():
        b, c = np.argwhere(over)[0]
        raise PatternError(f"block ({b}, {c}) has more than {cfg.n} nonzero sub-rows")

    keep = _first_k_true(live, cfg.n, axis=1)  # (nb, n, nc)
    sub = np.take_along_axis(blocks, keep[..., None], axis=1)  # (nb, n, nc, v)
    retained = sub.reshape(nb * cfg.n, cols)
    indices = keep.reshape(nb * cfg.n, nc).astype(np.uint8)

    groups = retained.reshape(retained.shape[0], cols // GROUP, GROUP)
    nz = groups != 0
    dense_groups = nz.sum(axis=2) > KEEP
    if dense_groups.any():
        r, g = np.argwhere(dense_groups)[0]
        raise PatternError(f"compressed row {r}, unit {g} has more than 2 nonzeros")
    pos = _first_k_true(nz, KEEP, axis=2)  # (R, G, 2)
    data = np.take_along_axis(groups, pos, axis=2).reshape(retained.shape[0], cols // 2)
    metadata = pos.reshape(retained.shape[0], cols // 2).astype(np.uint8)
    return SamoyedsWeight(
        rows=rows,
        cols=cols,
        config=cfg,
        data=np.ascontiguousarray(data, dtype=SCALAR),
        indices=np.ascontiguousarray(indices),
        metadata=np.ascontiguousarray(metadata),
    )


def validate_weight(sw: SamoyedsWeight) -> list[str]:
    """Every invariant violation found, one message per block/unit; empty when valid."""
    cfg = sw.config
    out = []
    if sw.rows % cfg.m or sw.cols % cfg.v:
        out.append(f"shape {sw.rows}x{sw.cols} not divisible by (m={cfg.m}, v={cfg.v})")
        return out
    R = compressed_rows(sw.rows, cfg)
    expect = {
        "data": (R, sw.cols // 2),
        "indices": (R, sw.cols // cfg.v),
        "metadata": (R, sw.cols // 2),
    }
    for name, shape in expect.items():
        got = getattr(sw, name).shape
        if tuple(got) != shape:
            out.append(f"{name} has shape {tuple(got)}, expected {shape}")
    if out:
        return out

    idx = sw.indices.astype(np.int64)
    for r, c in np.argwhere(idx >= cfg.m):
        out.append(f"indices[{r}, {c}] = {idx[r, c]} out of range [0, {cfg.m})")
    if cfg.n > 1:
        grouped = idx.reshape(R // cfg.n, cfg.n, -1)
        bad = (np.diff(grouped, axis=1) <= 0).any(axis=1)
        for b, c in np.argwhere(bad):
            out.append(f"block ({b}, {c}): sub-row indices {grouped[b, :, c].tolist()} not strictly increasing")

    meta = sw.metadata.astype(np.int64)
    for r, p in np.argwhere(meta >= GROUP):
        out.append(f"metadata[{r}, {p}] = {meta[r, p]} is not a 2-bit position")
    pairs = meta.reshape(R, -1, KEEP)
    for r, g in np.argwhere(pairs[:, :, 0] >= pairs[:, :, 1]):
        out.append(f"unit ({r}, {g}): metadata pair {tuple(pairs[r, g].tolist())} not strictly increasing")
    return out


def decode_weight(sw: SamoyedsWeight) -> np.ndarray:
    """Dense ``rows x cols`` float32 matrix represented by ``sw``."""
    problems = validate_weight(sw)
    if problems:
        raise CorruptFormat("; ".join(problems[:5]))
    cfg = sw.config
    R = compressed_rows(sw.rows, cfg)
    # expand each compressed row to its full sub-row width
    retained = np.zeros((R, sw.cols), dtype=SCALAR)
    np.put_along_axis(retained, sw.column_index(), sw.data, axis=1)

    out = np.zeros((sw.rows // cfg.m, cfg.m, sw.cols // cfg.v, cfg.v), dtype=SCALAR)
    sub = retained.reshape(R // cfg.n, cfg.n, sw.cols // cfg.v, cfg.v)
    keep = sw.indices.astype(np.int64).reshape(R // cfg.n, cfg.n, -1)
    np.put_along_axis(out, keep[..., None], sub, axis=1)
    return out.reshape(sw.rows, sw.cols)


def output_rows(sw: SamoyedsWeight) -> np.ndarray:
    """Logical output row of every (compressed row, block column) pair."""
    cfg = sw.config
    R = compressed_rows(sw.rows, cfg)
    base = (np.arange(R, dtype=np.int64) // cfg.n * cfg.m)[:, None]
    return base + sw.indices.astype(np.int64)
