"""Sparse-sparse matrix multiplication on encoded operands.

``C = decode(W) @ X[:, sel]`` where ``W`` is a :class:`SamoyedsWeight` and
``X`` a :class:`SelectedInput`. The tiled path works on the compressed
operands directly:

* block tiles of ``m_b`` compressed rows x ``n_b`` selected tokens, split
  into ``m_w x n_w`` warp tiles and ``m_i x n_i x k_i`` instruction tiles;
* the reduction walks k in ``k_b`` chunks through a ``num_pipe``-deep ring
  of staging buffers;
* partial sums live in per-sub-row working accumulators and are shuffled
  into the output rows named by the indices matrix every ``v / k_b``
  chunks, i.e. whenever the k window crosses into the next sub-row.

``m_b`` and ``m_w`` count compressed (retained) rows, the rows an
instruction tile actually consumes; a block tile therefore produces
``m_b / n * m`` logical output rows. Ragged edges in either dimension are
zero-padded inside the kernel and trimmed on output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend, kernels
from .errors import CorruptFormat, ShapeError, TileConfigError
from .format import SCALAR, SamoyedsWeight, SelectedInput, _check_sel, decode_weight, validate_weight
from .sptc import PRESETS as MMA_SHAPES


@dataclass(frozen=True)
class TileConfig:
    m_b: int = 128
    n_b: int = 64
    k_b: int = 32
    m_w: int = 32
    n_w: int = 32
    m_i: int = 16
    n_i: int = 8
    k_i: int = 32
    num_pipe: int = 2

    def __post_init__(self):
        problems = []
        if (self.m_i, self.n_i, self.k_i) not in MMA_SHAPES.values():
            problems.append(f"instruction tile m{self.m_i}n{self.n_i}k{self.k_i} is not a supported mma.sp shape")
        for name, val in vars(self).items():
            if val < 1:
                problems.append(f"{name} must be positive")
        if not problems:
            if self.m_w % self.m_i:
                problems.append("m_w % m_i != 0")
            if self.n_w % self.n_i:
                problems.append("n_w % n_i != 0")
            if self.m_b % self.m_w:
                problems.append("m_b % m_w != 0")
            if self.n_b % self.n_w:
                problems.append("n_b % n_w != 0")
            if self.k_b % self.k_i:
                problems.append("k_b % k_i != 0")
        if problems:
            raise TileConfigError("; ".join(problems))

    def check_format(self, cfg):
        if cfg.v % self.k_b:
            raise TileConfigError(f"sub-row length v={cfg.v} is not a multiple of k_b={self.k_b}")
        if self.m_b % cfg.n:
            raise TileConfigError(f"m_b={self.m_b} must hold whole blocks of n={cfg.n} retained rows")

    @classmethod
    def parse(cls, text: str, **extra) -> "TileConfig":
        """``"m_b,n_b,k_b,m_w,n_w"`` as used on the command line."""
        try:
            m_b, n_b, k_b, m_w, n_w = (int(p) for p in text.split(","))
        except ValueError:
            raise TileConfigError(f"expected m_b,n_b,k_b,m_w,n_w, got {text!r}") from None
        return cls(m_b=m_b, n_b=n_b, k_b=k_b, m_w=m_w, n_w=n_w, **extra)

    @classmethod
    def for_format(cls, cfg, base: "TileConfig | None" = None) -> "TileConfig":
        """``base`` (default tiles) with k_b/k_i shrunk to fit short sub-rows."""
        base = base or cls()
        if cfg.v % base.k_b == 0:
            return base
        k_b = 32 if cfg.v % 32 == 0 else 16
        if cfg.v % k_b:
            raise TileConfigError(f"no instruction tile fits sub-rows of length v={cfg.v}")
        k_i = min(base.k_i, k_b)
        return cls(m_b=base.m_b, n_b=base.n_b, k_b=k_b, m_w=base.m_w, n_w=base.n_w,
                   m_i=base.m_i, n_i=base.n_i, k_i=k_i, num_pipe=base.num_pipe)

    def astuple(self):
        return (self.m_b, self.n_b, self.k_b, self.m_w, self.n_w, self.m_i, self.n_i, self.k_i, self.num_pipe)

    def __str__(self):
        return f"{self.m_b},{self.n_b},{self.k_b},{self.m_w},{self.n_w}"


@dataclass(frozen=True, eq=False)
class Epilogue:
    """Work fused after the main loop.

    ``weighted_accumulate`` adds ``weights[i] * C[:, i]`` into row ``sel[i]``
    of a token-major ``destination`` (``total_cols x rows``); ``weights``
    has one entry per selected token.
    """

    kind: str = "none"
    activation: str = "none"
    weights: np.ndarray | None = None
    destination: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "activation", "weighted_accumulate"):
            raise ValueError(f"unknown epilogue kind {self.kind!r}")
        if self.kind == "activation" and self.activation not in ("silu", "gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "weighted_accumulate" and (self.weights is None or self.destination is None):
            raise ValueError("weighted_accumulate needs weights and a destination")

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def act(cls, name):
        return cls(kind="activation", activation=name) if name != "none" else cls()

    @classmethod
    def weighted_accumulate(cls, weights, destination):
        return cls(kind="weighted_accumulate", weights=weights, destination=destination)

    @property
    def code(self):
        return kernels.ACTIVATIONS[self.activation] if self.kind == "activation" else kernels.NONE


def apply_activation(values, name):
    """Unfused activation pass, for comparison against the fused epilogue."""
    code = kernels.ACTIVATIONS[name]
    return kernels._numpy.activate(values, code).astype(SCALAR)


def _check_operands(w: SamoyedsWeight, x: SelectedInput):
    if w.cols != x.k:
        raise ShapeError(f"weight has {w.cols} columns but input has k={x.k}")
    if x.data.shape != (len(x.sel), x.k):
        raise ShapeError(f"input data shape {x.data.shape} does not match ({len(x.sel)}, {x.k})")


def spmm_reference(w: SamoyedsWeight, x: SelectedInput) -> np.ndarray:
    """Straight triple loop over the decoded weight, float32, ascending k."""
    _check_operands(w, x)
    at = np.ascontiguousarray(decode_weight(w).T)  # at[k] is weight column k
    bt = np.ascontiguousarray(x.data.T)  # bt[k] is row k over the selected tokens
    out = np.zeros((w.rows, len(x.sel)), dtype=SCALAR)
    term = np.empty_like(out)
    # vectorised over (i, j); the k loop is the sequential reduction
    for kk in range(w.cols):
        np.multiply(at[kk, :, None], bt[kk, None, :], out=term)
        out += term
    return out


def _threads(threads):
    return _backend.default_threads() if threads is None else max(1, int(threads))


def _run(w, xtok, tc, ep, threads, backend, dest_rows=None):
    cfg = w.config
    validate = validate_weight(w)
    if validate:
        raise CorruptFormat("; ".join(validate[:5]))
    tc.check_format(cfg)
    T = xtok.shape[0]
    wacc = ep.kind == "weighted_accumulate"
    if wacc:
        weights = np.ascontiguousarray(ep.weights, dtype=SCALAR).reshape(-1)
        if weights.size != T:
            raise ShapeError(f"epilogue has {weights.size} weights for {T} output tokens")
        dest = ep.destination
        if dest.dtype != SCALAR or not dest.flags.c_contiguous or dest.ndim != 2:
            raise ShapeError("destination must be a C-contiguous float32 2-D array")
        if dest.shape[1] != w.rows:
            raise ShapeError(f"destination has {dest.shape[1]} columns, expected {w.rows}")
        out = np.empty((0, 0), dtype=SCALAR)
    else:
        weights = np.empty(0, dtype=SCALAR)
        dest = np.empty((0, 0), dtype=SCALAR)
        dest_rows = np.empty(0, dtype=np.int64)
        out = np.empty((T, w.rows), dtype=SCALAR)
    if w.cols == 0 or T == 0 or w.rows == 0:
        if not wacc:
            out[:] = 0.0
            if ep.code != kernels.NONE:
                out[:] = apply_activation(out, ep.activation)
        return dest if wacc else out
    kernels.spmm_sparse(
        w.data, w.metadata, w.indices, cfg.n, cfg.m, cfg.v,
        np.ascontiguousarray(xtok, dtype=SCALAR), w.rows,
        *tc.astuple(),
        ep.code, wacc, weights, dest, np.ascontiguousarray(dest_rows, dtype=np.int64), out,
        threads=_threads(threads), backend=backend,
    )
    return dest if wacc else out


def spmm_tiled(w: SamoyedsWeight, x: SelectedInput, tc: TileConfig | None = None,
               ep: Epilogue | None = None, threads=None, backend=None) -> np.ndarray:
    """Tiled product ``decode(w) @ selected(x)``, shape ``w.rows x len(x.sel)``.

    With a ``weighted_accumulate`` epilogue the destination is updated in
    place and returned instead.
    """
    _check_operands(w, x)
    tc = tc or TileConfig.for_format(w.config)
    ep = ep or Epilogue()
    res = _run(w, x.data, tc, ep, threads, backend, dest_rows=x.sel)
    if ep.kind == "weighted_accumulate":
        return res
    return np.ascontiguousarray(res.T)


def spmm_compressed_out(w: SamoyedsWeight, x: SelectedInput, tc: TileConfig | None = None,
                        ep: Epilogue | None = None, out_sel=None, threads=None, backend=None):
    """Tiled product emitting only tokens ``out_sel`` in the selected-input layout.

    ``out_sel`` are logical token ids and must be a subset of ``x.sel``
    (default: all of them). The result is a :class:`SelectedInput` over
    ``w.rows`` features, so it can feed the next projection unchanged.
    With a ``weighted_accumulate`` epilogue the destination is returned.
    """
    _check_operands(w, x)
    tc = tc or TileConfig.for_format(w.config)
    ep = ep or Epilogue()
    out_sel = x.sel if out_sel is None else _check_sel(out_sel, x.total_cols)
    pos = np.searchsorted(x.sel, out_sel)
    if out_sel.size and (np.any(pos >= len(x.sel)) or np.any(x.sel[np.minimum(pos, len(x.sel) - 1)] != out_sel)):
        raise ShapeError("out_sel must be a subset of the input selection")
    xtok = x.data if len(pos) == len(x.sel) else x.data[pos]
    res = _run(w, xtok, tc, ep, threads, backend, dest_rows=out_sel)
    if ep.kind == "weighted_accumulate":
        return res
    return SelectedInput(k=w.rows, total_cols=x.total_cols, sel=out_sel, data=res)


def spmm_dense_tiled(a: np.ndarray, x: SelectedInput, tc: TileConfig | None = None,
                     threads=None, backend=None) -> np.ndarray:
    """Dense weight through the same tiling and pipeline; the dense-pattern baseline."""
    a = np.ascontiguousarray(a, dtype=SCALAR)
    if a.ndim != 2 or a.shape[1] != x.k:
        raise ShapeError(f"weight shape {a.shape} incompatible with k={x.k}")
    tc = tc or TileConfig()
    if x.k % tc.k_b:
        raise TileConfigError(f"k={x.k} is not a multiple of k_b={tc.k_b}")
    out = np.zeros((len(x.sel), a.shape[0]), dtype=SCALAR)
    if out.size:
        kernels.spmm_dense(a, np.ascontiguousarray(x.data, dtype=SCALAR), *tc.astuple(), out,
                           threads=_threads(threads), backend=backend)
    return np.ascontiguousarray(out.T)


def shuffle_accumulators(acc, c_ir, indices_slice, n: int, m: int, backend=None):
    """Route working accumulators into intermediate output rows and reset them.

    ``acc`` holds one row of partial sums per compressed row (``n`` per
    block); row ``r`` lands in ``c_ir[r // n * m + indices_slice[r]]``.
    Both arrays are updated in place and returned.
    """
    idx = np.asarray(indices_slice).reshape(-1)
    if idx.size != acc.shape[0]:
        raise ShapeError(f"{idx.size} indices for {acc.shape[0]} accumulator rows")
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError(f"sub-row index outside [0, {m})")
    if acc.shape[0] % n:
        raise ShapeError("accumulator rows must cover whole blocks")
    if c_ir.shape[0] < acc.shape[0] // n * m:
        raise ShapeError("intermediate accumulators too small for the blocks covered")
    kernels.get(backend).shuffle(acc, c_ir, np.ascontiguousarray(idx, dtype=np.uint8), acc.shape[0], n, m)
    return acc, c_ir


def retained_flops(m: int, k: int, n_total: int, cfg, selection_fraction: float) -> float:
    """FLOPs of the retained work: 2*m*k*n * (n/m sub-rows) * 1/2 * selection."""
    return 2.0 * m * k * n_total * (cfg.n / cfg.m) * 0.5 * selection_fraction
