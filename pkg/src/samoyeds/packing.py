"""Metadata panel packing.

A 16x16 panel of 2-bit codes (one m16n8k32 instruction tile worth) is
permuted so each 8-row half lands in interleaved row pairs: element
``[r, c]`` moves to ``[r % 8 * 2 + c // 8, c % 8 + r // 8 * 8]``. Larger
metadata matrices are cut into disjoint 16x16 panels visited row-major;
edge panels that are not full 16x16 keep their row-major order.
"""

import numpy as np

from .errors import ShapeError

PANEL = 16

_r, _c = np.divmod(np.arange(PANEL * PANEL), PANEL)
# flat destination of every source element
_DEST = (_r % 8 * 2 + _c // 8) * PANEL + (_c % 8 + _r // 8 * 8)
_SRC = np.argsort(_DEST)


def packed_position(row: int, col: int) -> tuple[int, int]:
    return row % 8 * 2 + col // 8, col % 8 + row // 8 * 8


def _check_panel(panel):
    panel = np.asarray(panel)
    if panel.shape != (PANEL, PANEL):
        raise ShapeError(f"metadata panel must be 16x16, got {panel.shape}")
    return panel


def pack_metadata(meta16) -> np.ndarray:
    panel = _check_panel(meta16)
    if panel.size and (panel.min() < 0 or panel.max() > 3):
        raise ValueError("metadata codes must be in [0, 4)")
    out = np.empty(PANEL * PANEL, dtype=panel.dtype)
    out[_DEST] = panel.reshape(-1)
    return out.reshape(PANEL, PANEL)


def unpack_metadata(packed) -> np.ndarray:
    panel = _check_panel(packed)
    return panel.reshape(-1)[_DEST].reshape(PANEL, PANEL)


def _panels(rows, cols):
    for r0 in range(0, rows, PANEL):
        for c0 in range(0, cols, PANEL):
            yield r0, c0, min(PANEL, rows - r0), min(PANEL, cols - c0)


def panel_order(meta: np.ndarray) -> np.ndarray:
    """Flatten a metadata matrix into packed panel order (1-D)."""
    meta = np.asarray(meta)
    rows, cols = meta.shape
    if rows % PANEL == 0 and cols % PANEL == 0:
        # fast path: every panel full
        tiles = meta.reshape(rows // PANEL, PANEL, cols // PANEL, PANEL).transpose(0, 2, 1, 3)
        flat = tiles.reshape(-1, PANEL * PANEL)
        out = np.empty_like(flat)
        out[:, _DEST] = flat
        return out.reshape(-1)
    chunks = []
    for r0, c0, h, w in _panels(rows, cols):
        tile = meta[r0:r0 + h, c0:c0 + w]
        chunks.append(pack_metadata(tile).reshape(-1) if (h, w) == (PANEL, PANEL) else tile.reshape(-1))
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=meta.dtype)


def from_panel_order(flat: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`panel_order`."""
    flat = np.asarray(flat)
    if flat.size != rows * cols:
        raise ShapeError(f"expected {rows * cols} codes, got {flat.size}")
    if rows % PANEL == 0 and cols % PANEL == 0:
        tiles = flat.reshape(-1, PANEL * PANEL)[:, _DEST]
        tiles = tiles.reshape(rows // PANEL, cols // PANEL, PANEL, PANEL).transpose(0, 2, 1, 3)
        return np.ascontiguousarray(tiles.reshape(rows, cols))
    out = np.empty((rows, cols), dtype=flat.dtype)
    pos = 0
    for r0, c0, h, w in _panels(rows, cols):
        tile = flat[pos:pos + h * w].reshape(h, w)
        pos += h * w
        out[r0:r0 + h, c0:c0 + w] = unpack_metadata(tile) if (h, w) == (PANEL, PANEL) else tile
    return out


def pack_codes(codes: np.ndarray) -> bytes:
    """Four 2-bit codes per byte, first code in the low bits."""
    codes = np.asarray(codes, dtype=np.uint8).reshape(-1)
    pad = (-codes.size) % 4
    if pad:
        codes = np.concatenate([codes, np.zeros(pad, dtype=np.uint8)])
    q = codes.reshape(-1, 4)
    return (q[:, 0] | (q[:, 1] << 2) | (q[:, 2] << 4) | (q[:, 3] << 6)).astype(np.uint8).tobytes()


def unpack_codes(raw: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    codes = np.stack([b & 3, (b >> 2) & 3, (b >> 4) & 3, (b >> 6) & 3], axis=1).reshape(-1)
    return codes[:count].copy()
