"""Binary layout of an encoded weight (all little-endian).

    offset  size  field
    0       8     magic b"SMYDSFMT"
    8       2     u16 version (1)
    10      4     u32 rows
    14      4     u32 cols
    18      2     u16 n
    20      2     u16 m
    22      2     u16 v
    24      1     u8 scalar type tag (0 = f32)
    25      ...   data: rows*n/m * cols/2 f32, row-major
            ...   indices: rows*n/m * cols/v bytes, row-major
            ...   metadata: 2-bit codes in packed panel order, 4 per byte
"""

import struct

import numpy as np

from .errors import BadMagic, CorruptFormat, TruncatedStream, VersionMismatch
from .format import SamoyedsWeight, SparseFormatConfig, compressed_rows, validate_weight
from .packing import from_panel_order, pack_codes, panel_order, unpack_codes

MAGIC = b"SMYDSFMT"
VERSION = 1
HEADER = struct.Struct("<8sHIIHHHB")
SCALAR_TAGS = {0: np.dtype("<f4")}


def serialized_size(rows: int, cols: int, cfg: SparseFormatConfig) -> int:
    R = compressed_rows(rows, cfg)
    codes = R * cols // 2
    return HEADER.size + 4 * R * cols // 2 + R * cols // cfg.v + -(-codes // 4)


def serialize(sw: SamoyedsWeight) -> bytes:
    problems = validate_weight(sw)
    if problems:
        raise CorruptFormat("; ".join(problems[:5]))
    cfg = sw.config
    head = HEADER.pack(MAGIC, VERSION, sw.rows, sw.cols, cfg.n, cfg.m, cfg.v, 0)
    return b"".join(
        [
            head,
            np.ascontiguousarray(sw.data, dtype="<f4").tobytes(),
            np.ascontiguousarray(sw.indices, dtype=np.uint8).tobytes(),
            pack_codes(panel_order(sw.metadata)),
        ]
    )


def deserialize(buf: bytes) -> SamoyedsWeight:
    buf = bytes(buf)
    if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
        raise TruncatedStream(f"stream ends inside the magic ({len(buf)} bytes)")
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a serialized weight (bad magic)")
    if len(buf) < HEADER.size:
        raise TruncatedStream(f"header needs {HEADER.size} bytes, got {len(buf)}")
    _, version, rows, cols, n, m, v, tag = HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatch(f"unsupported version {version}, expected {VERSION}")
    if tag not in SCALAR_TAGS:
        raise CorruptFormat(f"unknown scalar type tag {tag}")
    try:
        cfg = SparseFormatConfig(n, m, v)
    except ValueError as exc:
        raise CorruptFormat(f"invalid config in header: {exc}") from None
    if rows % m or cols % v:
        raise CorruptFormat(f"header shape {rows}x{cols} not divisible by (m={m}, v={v})")

    expected = serialized_size(rows, cols, cfg)
    if len(buf) < expected:
        raise TruncatedStream(f"stream has {len(buf)} bytes, layout needs {expected}")
    if len(buf) > expected:
        raise CorruptFormat(f"{len(buf) - expected} trailing bytes after metadata")

    R = compressed_rows(rows, cfg)
    pos = HEADER.size
    n_data = R * cols // 2
    data = np.frombuffer(buf, dtype=SCALAR_TAGS[tag], count=n_data, offset=pos)
    pos += 4 * n_data
    n_idx = R * cols // v
    indices = np.frombuffer(buf, dtype=np.uint8, count=n_idx, offset=pos)
    pos += n_idx
    codes = unpack_codes(buf[pos:], n_data)
    sw = SamoyedsWeight(
        rows=rows,
        cols=cols,
        config=cfg,
        data=data.astype(np.float32).reshape(R, cols // 2),
        indices=indices.copy().reshape(R, cols // v),
        metadata=from_panel_order(codes, R, cols // 2).astype(np.uint8),
    )
    problems = validate_weight(sw)
    if problems:
        raise CorruptFormat("; ".join(problems[:5]))
    return sw
