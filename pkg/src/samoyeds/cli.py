"""``samoyeds`` command line: encode, decode, check, bench, memreport, traffic.

Matrix files are either CSV of floats or raw little-endian float32 with a
16-byte header (u32 magic ``0x534D594C``, u32 rows, u32 cols, u32 reserved).
Reported GFLOP/s count retained work only:
``2*m*k*n * (n/m) * 1/2 * selection_fraction``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .engine import TileConfig, retained_flops, spmm_dense_tiled, spmm_reference, spmm_tiled
from .errors import (
    BadMagic,
    CorruptFormat,
    PatternError,
    SamoyedsError,
    ShapeError,
    TileConfigError,
    TruncatedStream,
    VersionMismatch,
)
from .format import PRESETS, SparseFormatConfig, compress_input, compressed_rows, decode_weight, encode_weight
from .prune import prune_to_format
from .serialize import deserialize, serialize
from .traffic import SCHEMES, simulate_memory_traffic

RAW_MAGIC = 0x534D594C
RAW_HEADER = np.dtype([("magic", "<u4"), ("rows", "<u4"), ("cols", "<u4"), ("reserved", "<u4")])

EXIT_FAIL = 1
EXIT_INPUT = 2


@dataclass(frozen=True)
class BenchPreset:
    name: str
    experts: int
    hidden: int
    intermediate: int


BENCH_PRESETS = {
    p.name: p
    for p in (
        BenchPreset("qwen2", 60, 1408, 2048),
        BenchPreset("deepseek", 64, 1408, 2048),
        BenchPreset("minicpm", 8, 2304, 5760),
        BenchPreset("openmoe", 32, 3072, 12288),
        BenchPreset("mixtral8x7b", 8, 4096, 14336),
        BenchPreset("mixtral8x22b", 8, 6144, 16384),
    )
}

BENCH_COLUMNS = [
    "case", "m", "k", "n", "config", "tile", "threads",
    "median_s", "gflops", "bytes_moved", "speedup_vs_dense",
]


# -- matrix files -----------------------------------------------------------

def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) >= 4 and int.from_bytes(raw[:4], "little") == RAW_MAGIC:
        if len(raw) < RAW_HEADER.itemsize:
            raise ShapeError("raw matrix header truncated")
        head = np.frombuffer(raw[:RAW_HEADER.itemsize], dtype=RAW_HEADER)[0]
        rows, cols = int(head["rows"]), int(head["cols"])
        body = raw[RAW_HEADER.itemsize:]
        if len(body) != rows * cols * 4:
            raise ShapeError(f"raw matrix body has {len(body)} bytes, expected {rows * cols * 4}")
        return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)
    text = raw.decode("utf-8")
    return np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.float64, ndmin=2).astype(np.float32)


def write_matrix(path, a, raw=False):
    a = np.asarray(a, dtype=np.float32)
    if raw:
        head = np.array([(RAW_MAGIC, a.shape[0], a.shape[1], 0)], dtype=RAW_HEADER)
        with open(path, "wb") as f:
            f.write(head.tobytes())
            f.write(a.astype("<f4").tobytes())
    else:
        np.savetxt(path, a, delimiter=",", fmt="%.9g")


# -- helpers ----------------------------------------------------------------

def _format(args) -> SparseFormatConfig:
    return SparseFormatConfig(args.n, args.m, args.v)


def _tile(args, cfg) -> TileConfig:
    if args.tile:
        return TileConfig.parse(args.tile)
    return TileConfig.for_format(cfg)


def _threads(args):
    return args.threads if args.threads is not None else _backend.default_threads()


def _emit_rows(rows, columns, path):
    if path:
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=columns)
            w.writeheader()
            w.writerows(rows)
    w = csv.DictWriter(sys.stdout, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)


def _fail(msg, code):
    print(f"error: {msg}", file=sys.stderr)
    return code


# -- encode / decode --------------------------------------------------------

def cmd_encode(args):
    cfg = _format(args)
    w = read_matrix(args.input)
    if args.assume_pruned:
        sw = encode_weight(w, cfg)
        print(f"encoded {w.shape[0]}x{w.shape[1]} as {cfg} without pruning")
    else:
        pruned, report = prune_to_format(w, cfg)
        sw = encode_weight(pruned, cfg)
        print(
            f"kept_subrows={report.kept_subrows} zeroed_elements={report.zeroed_elements} "
            f"achieved_sparsity={report.achieved_sparsity:.4f}"
        )
    blob = serialize(sw)
    with open(args.output, "wb") as f:
        f.write(blob)
    print(f"wrote {len(blob)} bytes to {args.output} (n={cfg.n},m={cfg.m},v={cfg.v})")
    return 0


def cmd_decode(args):
    with open(args.input, "rb") as f:
        sw = deserialize(f.read())
    write_matrix(args.output, decode_weight(sw), raw=args.raw)
    print(f"wrote {sw.rows}x{sw.cols} dense matrix to {args.output}")
    return 0


# -- check ------------------------------------------------------------------

def _check_blob(blob, rng, tokens, fraction, tc=None, threads=1):
    """Run every stage on one serialized weight; return (stage, message) of the first failure."""
    try:
        sw = deserialize(blob)
    except CorruptFormat as exc:
        return _stage_of(exc), str(exc)
    if serialize(sw) != bytes(blob):
        return "roundtrip", "re-serialized bytes differ"
    if deserialize(serialize(sw)) != sw:
        return "roundtrip", "decoded weight differs after a second pass"
    x = rng.standard_normal((sw.cols, tokens)).astype(np.float32)
    count = max(0, min(tokens, math.ceil(fraction * tokens)))
    sel = np.sort(rng.choice(tokens, size=count, replace=False))
    xs = compress_input(x, sel)
    try:
        try:
            tile = tc or TileConfig.for_format(sw.config)
        except TileConfigError:
            tile = None  # sub-rows shorter than any instruction tile
        if tile is None:
            got = spmm_reference(sw, xs)
        else:
            got = spmm_tiled(sw, xs, tile, threads=threads)
    except SamoyedsError as exc:
        return "spmm", str(exc)
    want = decode_weight(sw).astype(np.float64) @ x[:, sel].astype(np.float64)
    denom = np.linalg.norm(want)
    err = np.linalg.norm(got - want) / denom if denom else np.linalg.norm(got)
    if err > 1e-5:
        return "spmm", f"relative error {err:.3g} above 1e-5"
    return None


def _stage_of(exc):
    if isinstance(exc, (BadMagic, TruncatedStream, VersionMismatch)):
        return "header"
    return "packing/validate"


def _random_case(rng):
    cfg = list(PRESETS.values())[int(rng.integers(len(PRESETS)))]
    rows = cfg.m * int(rng.integers(1, 9))
    cols = cfg.v * int(rng.integers(1, 5))
    w = rng.standard_normal((rows, cols)).astype(np.float32)
    return encode_weight(prune_to_format(w, cfg)[0], cfg)


def cmd_check(args):
    rng = np.random.default_rng(args.seed)
    tc = TileConfig.parse(args.tile) if args.tile else None
    threads = _threads(args)
    if args.weight:
        with open(args.weight, "rb") as f:
            blobs = [(args.weight, f.read())]
    else:
        blobs = [(f"draw {i}", serialize(_random_case(rng))) for i in range(args.draws)]
    for name, blob in blobs:
        failure = _check_blob(blob, rng, args.tokens, args.selection, tc, threads)
        if failure:
            stage, msg = failure
            print(f"FAIL {name}: stage {stage}: {msg}")
            return EXIT_FAIL
        print(f"PASS {name}: header, packing/validate, roundtrip, spmm")
    return 0


# -- bench ------------------------------------------------------------------

def _median_time(fn, repeats):
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _bench_cases(args):
    if args.preset:
        p = BENCH_PRESETS[args.preset]
        return [
            (f"{p.name}-gate_up", p.intermediate, p.hidden, args.tokens),
            (f"{p.name}-down", p.hidden, p.intermediate, args.tokens),
        ]
    sizes = [int(s) for s in args.sweep.split(",")]
    return [(f"sweep-{s}", s, s, s) for s in sizes]


def cmd_bench(args):
    cfg = _format(args)
    tc = _tile(args, cfg)
    threads = _threads(args)
    rng = np.random.default_rng(args.seed)
    cases = _bench_cases(args)
    for case, m, k, n in cases:
        if max(m, k, n) > args.max_dim:
            return _fail(f"case {case} ({m}x{k}x{n}) exceeds the --max-dim budget of {args.max_dim}", EXIT_INPUT)
    rows = []
    for case, m, k, n in cases:
        a = rng.standard_normal((m, k)).astype(np.float32)
        sw = encode_weight(prune_to_format(a, cfg)[0], cfg)
        x = rng.standard_normal((k, n)).astype(np.float32)
        count = round(args.selection * n)
        sel = np.sort(rng.choice(n, size=count, replace=False))
        xs = compress_input(x, sel)
        xfull = compress_input(x, np.arange(n))
        t_sparse = _median_time(lambda: spmm_tiled(sw, xs, tc, threads=threads), args.repeats)
        t_dense = _median_time(lambda: spmm_dense_tiled(a, xfull, tc, threads=threads), args.repeats)
        traffic = simulate_memory_traffic((m, k, n), cfg, count / n if n else 0.0, tc, "samoyeds")
        flops = retained_flops(m, k, n, cfg, count / n if n else 0.0)
        rows.append({
            "case": case, "m": m, "k": k, "n": n, "config": str(cfg), "tile": str(tc),
            "threads": threads, "median_s": f"{t_sparse:.6f}",
            "gflops": f"{flops / t_sparse / 1e9:.3f}" if t_sparse else "inf",
            "bytes_moved": traffic.total_bytes,
            "speedup_vs_dense": f"{t_dense / t_sparse:.3f}" if t_sparse else "inf",
        })
    _emit_rows(rows, BENCH_COLUMNS, args.csv)
    return 0


# -- memreport --------------------------------------------------------------

def storage_breakdown(rows, cols, cfg):
    """Closed-form bytes of one ``rows x cols`` f32 weight, dense and encoded."""
    if rows % cfg.m or cols % cfg.v:
        raise ShapeError(f"shape not divisible: {rows}x{cols} by m={cfg.m}, v={cfg.v}")
    R = compressed_rows(rows, cfg)
    data = R * cols // 2 * 4
    indices = R * cols // cfg.v
    metadata = -(-(R * cols // 2) // 4)
    return {"dense": rows * cols * 4, "data": data, "metadata": metadata, "indices": indices,
            "total": data + metadata + indices}


def cmd_memreport(args):
    cfg = _format(args)
    if args.shape:
        r, c = (int(d) for d in args.shape.lower().split("x"))
        layers = [(f"{r}x{c}", r, c, 1)]
    else:
        p = BENCH_PRESETS[args.preset]
        layers = [
            ("gate_proj", p.intermediate, p.hidden, p.experts),
            ("up_proj", p.intermediate, p.hidden, p.experts),
            ("down_proj", p.hidden, p.intermediate, p.experts),
        ]
    cols = ["layer", "count", "dense", "data", "metadata", "indices", "total", "ratio"]
    out = []
    totals = dict.fromkeys(["dense", "data", "metadata", "indices", "total"], 0)
    for name, r, c, count in layers:
        b = storage_breakdown(r, c, cfg)
        out.append({"layer": name, "count": count, **b, "ratio": f"{b['total'] / b['dense']:.5f}"})
        for key in totals:
            totals[key] += b[key] * count
    if len(layers) > 1 or layers[0][3] > 1:
        out.append({"layer": "total", "count": "", **totals, "ratio": f"{totals['total'] / totals['dense']:.5f}"})
    if args.csv:
        _emit_rows(out, cols, args.csv)
        return 0
    print(f"storage for {cfg} (bytes, f32 values, 2-bit metadata, 1-byte indices)")
    for row in out:
        print(
            f"{row['layer']:>12} x{row['count'] or '-':<4} dense {row['dense']:>14,} B | "
            f"data {row['data']:>13,} B | metadata {row['metadata']:>11,} B | "
            f"indices {row['indices']:>11,} B | total {row['total']:>13,} B | ratio {row['ratio']}"
        )
    return 0


# -- traffic ----------------------------------------------------------------

def cmd_traffic(args):
    cfg = _format(args)
    tc = _tile(args, cfg)
    m, k, n = (int(d) for d in args.shape.split(","))
    cols = ["scheme", "bytes_loaded_a", "bytes_loaded_b", "total_bytes", "transactions", "coalesced_fraction"]
    rows = []
    for scheme in SCHEMES:
        r = simulate_memory_traffic((m, k, n), cfg, args.selection, tc, scheme)
        rows.append({"scheme": scheme, "bytes_loaded_a": r.bytes_loaded_a, "bytes_loaded_b": r.bytes_loaded_b,
                     "total_bytes": r.total_bytes, "transactions": r.transactions,
                     "coalesced_fraction": f"{r.coalesced_fraction:.4f}"})
    _emit_rows(rows, cols, args.csv)
    return 0


# -- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=1, help="sub-rows kept per block")
    common.add_argument("--m", type=int, default=2, help="sub-rows per block")
    common.add_argument("--v", type=int, default=32, help="sub-row length")
    common.add_argument("--tile", help="m_b,n_b,k_b,m_w,n_w")
    common.add_argument("--threads", type=int, default=None, help="default: $SAMOYEDS_THREADS or 1")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--csv", help="also write CSV rows to this path")

    p = argparse.ArgumentParser(prog="samoyeds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("encode", parents=[common], help="prune and encode a dense matrix file")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--assume-pruned", action="store_true", help="encode as-is, fail if the pattern is violated")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", parents=[common], help="expand a serialized weight to a dense matrix file")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--raw", action="store_true", help="write raw f32 instead of CSV")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("check", parents=[common], help="roundtrip, validate and oracle-check weights")
    s.add_argument("weight", nargs="?", help="serialized weight; omit to check random draws")
    s.add_argument("--draws", type=int, default=20)
    s.add_argument("--tokens", type=int, default=64)
    s.add_argument("--selection", type=float, default=0.5)
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("bench", parents=[common], help="time the tiled engine against the dense path")
    grp = s.add_mutually_exclusive_group()
    grp.add_argument("--preset", choices=sorted(BENCH_PRESETS))
    grp.add_argument("--sweep", default="256,512,1024,2048", help="comma-separated square sizes")
    s.add_argument("--tokens", type=int, default=512, help="tokens per preset case")
    s.add_argument("--selection", type=float, default=1.0)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--max-dim", type=int, default=4096)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("memreport", parents=[common], help="storage of dense vs encoded weights")
    grp = s.add_mutually_exclusive_group(required=True)
    grp.add_argument("--preset", choices=sorted(BENCH_PRESETS))
    grp.add_argument("--shape", help="ROWSxCOLS")
    s.set_defaults(func=cmd_memreport)

    s = sub.add_parser("traffic", parents=[common], help="memory traffic of each access scheme")
    s.add_argument("--shape", required=True, help="m,k,n")
    s.add_argument("--selection", type=float, default=1.0)
    s.set_defaults(func=cmd_traffic)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorruptFormat, OSError) as exc:
        return _fail(str(exc), EXIT_FAIL)
    except (ShapeError, PatternError, TileConfigError, ValueError) as exc:
        return _fail(str(exc), EXIT_INPUT)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
