"""Magnitude pruning into the (n, m, v) + 2:4 pattern.

Sub-rows are ranked by L1 norm inside each ``m x v`` block and elements by
absolute value inside each 4-group of a kept sub-row. Ties always go to the
lower index, so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .format import GROUP, KEEP, SparseFormatConfig


@dataclass(frozen=True)
class PruneReport:
    kept_subrows: int
    zeroed_elements: int  # nonzeros of the input removed by pruning
    achieved_sparsity: float  # 1 - nonzeros(out) / size


def _as_matrix(w, cfg):
    w = np.asarray(w)
    if w.ndim != 2:
        raise ShapeError(f"expected 2-D weight, got {w.ndim}-D")
    rows, cols = w.shape
    if rows % cfg.m or cols % cfg.v:
        raise ShapeError(
            f"shape not divisible: {rows}x{cols} needs rows % {cfg.m} == 0 and cols % {cfg.v} == 0"
        )
    return w


def subrow_scores(w, cfg: SparseFormatConfig) -> np.ndarray:
    """L1 norm of every sub-row, shape ``rows x cols/v``."""
    w = _as_matrix(w, cfg)
    rows, cols = w.shape
    return np.abs(w.astype(np.float64)).reshape(rows, cols // cfg.v, cfg.v).sum(axis=2)


def _top_mask(scores, k, axis):
    # descending, ties to the lower index: stable sort on the negated key
    order = np.argsort(-scores, axis=axis, kind="stable")
    top = np.take(order, np.arange(k), axis=axis)
    mask = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(mask, top, True, axis=axis)
    return mask


def prune_mask(w, cfg: SparseFormatConfig) -> np.ndarray:
    w = _as_matrix(w, cfg)
    rows, cols = w.shape
    scores = subrow_scores(w, cfg).reshape(rows // cfg.m, cfg.m, cols // cfg.v)
    rows_kept = _top_mask(scores, cfg.n, axis=1).reshape(rows, cols // cfg.v)
    groups = np.abs(w.astype(np.float64)).reshape(rows, cols // GROUP, GROUP)
    elems = _top_mask(groups, KEEP, axis=2).reshape(rows, cols)
    return elems & np.repeat(rows_kept, cfg.v, axis=1)


def prune_to_format(w, cfg: SparseFormatConfig) -> tuple[np.ndarray, PruneReport]:
    w = _as_matrix(w, cfg)
    mask = prune_mask(w, cfg)
    out = np.where(mask, w, 0).astype(np.float32)
    nonzero_in = int(np.count_nonzero(w))
    nonzero_out = int(np.count_nonzero(out))
    report = PruneReport(
        kept_subrows=int(mask.reshape(w.shape[0], -1, cfg.v).any(axis=2).sum()),
        zeroed_elements=nonzero_in - nonzero_out,
        achieved_sparsity=1.0 - nonzero_out / w.size if w.size else 0.0,
    )
    return out, report
