"""Closed-form global-memory traffic for one ``m x k`` by ``k x n`` product.

Byte counts are compulsory traffic: every operand byte a scheme has to touch,
counted once. Weight values are counted in 2:4-compressed form for every
scheme (4-byte scalars, half the elements of each row), so the schemes
differ only in what they do with sub-row and token sparsity:

========================  =========================  ===========================
scheme                    A (weight) bytes           B (input) bytes
========================  =========================  ===========================
``dense``                 all rows                   all tokens
``skip_row_naive``        retained sub-rows only     all tokens
``skip_col_naive``        all rows                   selected tokens only
``uncoalesced``           retained sub-rows only     one 32-byte sector/element
``samoyeds``              retained sub-rows only     selected tokens only
========================  =========================  ===========================

Metadata and index bytes are left out; they are identical across the
compressed schemes and small (see ``cli memreport`` for the storage view).
Transactions count 32-byte sectors per ``k_b`` chunk, so the tile shape only
moves the transaction count, never the byte totals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .engine import TileConfig
from .format import SparseFormatConfig

SCHEMES = ("dense", "skip_row_naive", "skip_col_naive", "uncoalesced", "samoyeds")
SECTOR = 32
ELEM = 4


@dataclass(frozen=True)
class TrafficReport:
    scheme: str
    bytes_loaded_a: int
    bytes_loaded_b: int
    transactions: int
    coalesced_fraction: float

    @property
    def total_bytes(self) -> int:
        return self.bytes_loaded_a + self.bytes_loaded_b


def _sectors(nbytes):
    return math.ceil(nbytes / SECTOR)


def simulate_memory_traffic(shape, cfg: SparseFormatConfig, input_sel_fraction: float,
                            tc: TileConfig | None = None, scheme: str = "samoyeds") -> TrafficReport:
    """Traffic of ``scheme`` for weight ``m x k`` in format ``cfg`` times ``k x n`` input.

    ``input_sel_fraction`` of the ``n`` tokens are selected (rounded to a
    whole token count).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not 0.0 <= input_sel_fraction <= 1.0:
        raise ValueError("input_sel_fraction must lie in [0, 1]")
    m, k, n = (int(d) for d in shape)
    tc = tc or TileConfig()
    chunks = math.ceil(k / tc.k_b)

    rows_all = m
    rows_kept = m * cfg.n // cfg.m
    tok_all = n
    tok_sel = round(input_sel_fraction * n)

    rows = rows_all if scheme in ("dense", "skip_col_naive") else rows_kept
    toks = tok_all if scheme in ("dense", "skip_row_naive") else tok_sel

    a_bytes = rows * (k // 2) * ELEM
    a_tx = rows * chunks * _sectors(tc.k_b // 2 * ELEM)
    if scheme == "uncoalesced":
        # the selection is honoured, but each element is its own gather
        b_bytes = toks * k * SECTOR
        b_tx = toks * k
        total = a_tx + b_tx
        frac = a_tx / total if total else 1.0
        return TrafficReport(scheme, a_bytes, b_bytes, total, frac)
    b_bytes = toks * k * ELEM
    b_tx = toks * chunks * _sectors(tc.k_b * ELEM)
    return TrafficReport(scheme, a_bytes, b_bytes, a_tx + b_tx, 1.0)


def traffic_table(shape, cfg, input_sel_fraction, tc=None):
    return {s: simulate_memory_traffic(shape, cfg, input_sel_fraction, tc, s) for s in SCHEMES}
