"""Mixture-of-experts layer over encoded expert weights.

Each expert sees only its routed tokens as a :class:`SelectedInput`; the
gate/up/down chain stays in that compressed layout, and the down projection
adds ``gate_weight * y`` straight into the token-major output through the
weighted-accumulate epilogue. Nothing is permuted or un-permuted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Epilogue, TileConfig, spmm_compressed_out
from .errors import ShapeError
from .format import SCALAR, SamoyedsWeight, SelectedInput, SparseFormatConfig, encode_weight
from .prune import prune_to_format


@dataclass(frozen=True)
class MoEConfig:
    num_experts: int
    top_k: int
    hidden: int
    intermediate: int
    num_shared: int = 0
    activation: str = "silu"

    def __post_init__(self):
        if not 1 <= self.top_k <= self.num_experts:
            raise ShapeError(f"top_k={self.top_k} outside [1, num_experts={self.num_experts}]")
        if self.hidden < 1 or self.intermediate < 1 or self.num_shared < 0:
            raise ShapeError("hidden and intermediate must be positive, num_shared non-negative")
        if self.activation not in ("silu", "gelu", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class ExpertWeights:
    gate_proj: SamoyedsWeight
    up_proj: SamoyedsWeight
    down_proj: SamoyedsWeight

    def check(self, cfg: MoEConfig):
        want = {
            "gate_proj": (cfg.intermediate, cfg.hidden),
            "up_proj": (cfg.intermediate, cfg.hidden),
            "down_proj": (cfg.hidden, cfg.intermediate),
        }
        for name, shape in want.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ShapeError(f"{name} has shape {got}, expected {shape}")

    @classmethod
    def from_dense(cls, gate, up, down, fmt: SparseFormatConfig) -> "ExpertWeights":
        """Prune each projection to ``fmt`` and encode it."""
        enc = [encode_weight(prune_to_format(w, fmt)[0], fmt) for w in (gate, up, down)]
        return cls(*enc)

    @classmethod
    def random(cls, cfg: MoEConfig, fmt: SparseFormatConfig, rng) -> "ExpertWeights":
        """Gaussian expert scaled by fan-in, so activations stay O(1)."""
        h, i = cfg.hidden, cfg.intermediate
        gate = rng.standard_normal((i, h)) / np.sqrt(h)
        up = rng.standard_normal((i, h)) / np.sqrt(h)
        down = rng.standard_normal((h, i)) / np.sqrt(i)
        return cls.from_dense(gate, up, down, fmt)


@dataclass(frozen=True, eq=False)
class RoutingResult:
    """``experts[t]``/``weights[t]`` list token t's choices best first; ``sel[e]`` its tokens."""

    experts: np.ndarray
    weights: np.ndarray
    sel: list = field(default_factory=list)

    @property
    def tokens(self):
        return self.experts.shape[0]

    def pairs(self, t):
        return list(zip(self.experts[t].tolist(), self.weights[t].tolist()))

    def expert_weights(self, e) -> np.ndarray:
        """Gate weight of expert ``e`` for each token in ``sel[e]``."""
        rows = self.sel[e]
        hit = self.experts[rows] == e
        return self.weights[rows][hit]


def route_tokens(logits, top_k: int) -> RoutingResult:
    """Top-k experts per token (ties to the lower id), softmax over the chosen logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be tokens x experts, got {logits.ndim}-D")
    tokens, num_experts = logits.shape
    if not 1 <= top_k <= num_experts:
        raise ShapeError(f"top_k={top_k} outside [1, {num_experts}]")
    # a stable sort on the negated logits keeps equal scores in id order
    chosen = np.argsort(-logits, axis=1, kind="stable")[:, :top_k]
    picked = np.take_along_axis(logits, chosen, axis=1)
    z = np.exp(picked - picked[:, :1])
    weights = z / z.sum(axis=1, keepdims=True)
    sel = [np.flatnonzero((chosen == e).any(axis=1)) for e in range(num_experts)]
    return RoutingResult(experts=chosen, weights=weights, sel=sel)


def expert_forward(ew: ExpertWeights, x_sel: SelectedInput, cfg: MoEConfig,
                   epilogue: Epilogue | None = None, tc: TileConfig | None = None,
                   threads=None, backend=None):
    """``down(act(gate x) * up x)`` over the selected tokens only.

    Returns a :class:`SelectedInput` over ``hidden``, or the epilogue's
    destination when ``epilogue`` is a weighted accumulation.
    """
    ew.check(cfg)
    if x_sel.k != cfg.hidden:
        raise ShapeError(f"input has k={x_sel.k}, expected hidden={cfg.hidden}")
    kw = dict(tc=tc, threads=threads, backend=backend)
    g = spmm_compressed_out(ew.gate_proj, x_sel, ep=Epilogue.act(cfg.activation), **kw)
    u = spmm_compressed_out(ew.up_proj, x_sel, **kw)
    h = SelectedInput(k=cfg.intermediate, total_cols=x_sel.total_cols, sel=x_sel.sel,
                      data=g.data * u.data)
    return spmm_compressed_out(ew.down_proj, h, ep=epilogue, **kw)


def moe_forward(experts, shared, x, logits, cfg: MoEConfig, tc: TileConfig | None = None,
                threads=None, backend=None, routing: RoutingResult | None = None) -> np.ndarray:
    """Routed plus shared experts for token-major ``x`` (tokens x hidden).

    Experts run one after another into a single float32 output, so the
    result does not depend on thread count.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != cfg.hidden:
        raise ShapeError(f"x must be tokens x {cfg.hidden}, got {x.shape}")
    if len(experts) != cfg.num_experts:
        raise ShapeError(f"{len(experts)} experts given, config expects {cfg.num_experts}")
    if len(shared) != cfg.num_shared:
        raise ShapeError(f"{len(shared)} shared experts given, config expects {cfg.num_shared}")
    tokens = x.shape[0]
    if routing is None:
        logits = np.asarray(logits)
        if logits.shape != (tokens, cfg.num_experts):
            raise ShapeError(f"logits shape {logits.shape} != ({tokens}, {cfg.num_experts})")
        routing = route_tokens(logits, cfg.top_k)
    out = np.zeros((tokens, cfg.hidden), dtype=SCALAR)
    kw = dict(tc=tc, threads=threads, backend=backend)
    for e, ew in enumerate(experts):
        sel = routing.sel[e]
        if sel.size == 0:
            continue
        xs = SelectedInput.from_tokens(x, sel)
        ep = Epilogue.weighted_accumulate(routing.expert_weights(e), out)
        expert_forward(ew, xs, cfg, epilogue=ep, **kw)
    if shared:
        xs = SelectedInput.from_tokens(x, np.arange(tokens))
        ones = np.ones(tokens, dtype=SCALAR)
        for ew in shared:
            expert_forward(ew, xs, cfg, epilogue=Epilogue.weighted_accumulate(ones, out), **kw)
    return out
