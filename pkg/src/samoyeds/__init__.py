"""Dual-side structured sparse format, sparse-sparse GEMM engine and MoE layer."""

from .errors import (
    BadMagic,
    CorruptFormat,
    PatternError,
    SamoyedsError,
    SelectionError,
    ShapeError,
    TileConfigError,
    TruncatedStream,
    VersionMismatch,
)
from .format import (
    PRESETS,
    SamoyedsWeight,
    SelectedInput,
    SparseFormatConfig,
    compress_input,
    decode_weight,
    encode_weight,
    validate_weight,
)
from .packing import pack_metadata, unpack_metadata
from .serialize import deserialize, serialize, serialized_size
from .prune import PruneReport, prune_to_format, subrow_scores
from .sptc import InstructionTile, sp_mma_tile
from .engine import (
    Epilogue,
    TileConfig,
    shuffle_accumulators,
    spmm_compressed_out,
    spmm_dense_tiled,
    spmm_reference,
    spmm_tiled,
)
from .traffic import SCHEMES, TrafficReport, simulate_memory_traffic
from .moe import (
    ExpertWeights,
    MoEConfig,
    RoutingResult,
    expert_forward,
    moe_forward,
    route_tokens,
)

__version__ = "0.1.0"
