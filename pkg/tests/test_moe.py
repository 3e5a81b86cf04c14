import numpy as np
import pytest

from samoyeds import (
    ExpertWeights,
    MoEConfig,
    RoutingResult,
    ShapeError,
    SparseFormatConfig,
    decode_weight,
    encode_weight,
    expert_forward,
    moe_forward,
    route_tokens,
)
from samoyeds.format import SelectedInput

import oracles

FMT = SparseFormatConfig(1, 2, 32)


def dense_parts(ew):
    return tuple(decode_weight(w) for w in (ew.gate_proj, ew.up_proj, ew.down_proj))


@pytest.fixture
def small(rng):
    cfg = MoEConfig(num_experts=4, top_k=2, hidden=64, intermediate=128, num_shared=1)
    experts = [ExpertWeights.random(cfg, FMT, rng) for _ in range(4)]
    shared = [ExpertWeights.random(cfg, FMT, rng)]
    x = rng.standard_normal((50, 64)).astype(np.float32)
    logits = rng.standard_normal((50, 4))
    return cfg, experts, shared, x, logits


class TestRouting:
    def test_top1(self):
        r = route_tokens([[0.1, 2.0, -1.0]], 1)
        assert r.pairs(0) == [(1, 1.0)]

    def test_tie_rule(self):
        r = route_tokens([[1.0, 1.0, 0.0]], 2)
        assert r.pairs(0) == [(0, 0.5), (1, 0.5)]

    def test_shift_invariance(self, rng):
        logits = rng.standard_normal((20, 6))
        a = route_tokens(logits, 3)
        b = route_tokens(logits + rng.standard_normal((20, 1)) * 10, 3)
        np.testing.assert_array_equal(a.experts, b.experts)
        np.testing.assert_allclose(a.weights, b.weights, rtol=1e-12)

    def test_invariants(self, rng):
        logits = rng.standard_normal((100, 8))
        r = route_tokens(logits, 2)
        assert sum(len(s) for s in r.sel) == 200
        np.testing.assert_allclose(r.weights.sum(axis=1), 1.0, atol=1e-6)
        for s in r.sel:
            assert np.all(np.diff(s) > 0)
        assert all(len(set(row)) == 2 for row in r.experts.tolist())

    def test_matches_oracle(self, rng):
        logits = rng.integers(-2, 3, size=(60, 5)).astype(float)  # plenty of ties
        r = route_tokens(logits, 3)
        want = oracles.route(logits, 3)
        for t in range(60):
            got = r.pairs(t)
            assert [e for e, _ in got] == [e for e, _ in want[t]]
            np.testing.assert_allclose([w for _, w in got], [w for _, w in want[t]], rtol=1e-12)

    def test_expert_weights_align_with_sel(self, rng):
        r = route_tokens(rng.standard_normal((30, 4)), 2)
        for e in range(4):
            w = r.expert_weights(e)
            assert len(w) == len(r.sel[e])
            for t, g in zip(r.sel[e], w):
                assert dict(r.pairs(t))[e] == g

    def test_errors(self):
        with pytest.raises(ShapeError):
            route_tokens([[1.0, 2.0]], 3)
        with pytest.raises(ShapeError):
            route_tokens([1.0, 2.0], 1)


class TestConfig:
    def test_invalid(self):
        with pytest.raises(ShapeError):
            MoEConfig(4, 5, 64, 64)
        with pytest.raises(ShapeError):
            MoEConfig(4, 0, 64, 64)
        with pytest.raises(ShapeError):
            MoEConfig(4, 1, 64, 64, num_shared=-1)
        with pytest.raises(ValueError):
            MoEConfig(4, 1, 64, 64, activation="tanh")

    def test_expert_shapes(self, rng):
        cfg = MoEConfig(2, 1, 64, 128)
        ew = ExpertWeights.random(cfg, FMT, rng)
        ew.check(cfg)
        with pytest.raises(ShapeError):
            ew.check(MoEConfig(2, 1, 128, 64))


class TestExpert:
    def test_zero_input(self, small):
        cfg, experts, _, _, _ = small
        xs = SelectedInput.from_tokens(np.zeros((10, 64), np.float32), np.arange(10))
        out = expert_forward(experts[0], xs, cfg)
        assert not out.data.any()

    def test_identity_relu_squares(self, rng):
        cfg = MoEConfig(1, 1, 64, 64, activation="relu")
        fmt = SparseFormatConfig(2, 2, 32)
        eye = encode_weight(np.eye(64, dtype=np.float32), fmt)
        ew = ExpertWeights(eye, eye, eye)
        x = rng.integers(0, 5, size=(12, 64)).astype(np.float32)
        out = expert_forward(ew, SelectedInput.from_tokens(x, [1, 5, 9]), cfg)
        np.testing.assert_array_equal(out.data, x[[1, 5, 9]] ** 2)
        np.testing.assert_array_equal(out.sel, [1, 5, 9])

    @pytest.mark.parametrize("act", ["silu", "gelu", "relu"])
    def test_against_dense(self, rng, act):
        cfg = MoEConfig(1, 1, 128, 256, activation=act)
        ew = ExpertWeights.random(cfg, SparseFormatConfig(4, 8, 32), rng)
        x = rng.standard_normal((64, 128)).astype(np.float32)
        out = expert_forward(ew, SelectedInput.from_tokens(x, np.arange(64)), cfg)
        want = oracles.gated_mlp(*dense_parts(ew), x, act)
        assert np.abs(out.data - want).max() <= 1e-4

    def test_shape_error(self, small):
        cfg, experts, _, _, _ = small
        with pytest.raises(ShapeError):
            expert_forward(experts[0], SelectedInput.from_tokens(np.zeros((3, 32), np.float32), [0]), cfg)


class TestForward:
    def test_textbook_oracle(self, small):
        cfg, experts, shared, x, logits = small
        out = moe_forward(experts, shared, x, logits, cfg)
        want = oracles.textbook_moe([dense_parts(e) for e in experts], [dense_parts(s) for s in shared],
                                    x, logits, cfg.top_k, cfg.activation)
        assert out.shape == (50, 64) and out.dtype == np.float32
        assert np.abs(out - want).max() <= 1e-4

    def test_all_to_one_expert(self, rng):
        cfg = MoEConfig(2, 1, 64, 64)
        experts = [ExpertWeights.random(cfg, FMT, rng) for _ in range(2)]
        x = rng.standard_normal((20, 64)).astype(np.float32)
        logits = np.tile([5.0, -5.0], (20, 1))
        out = moe_forward(experts, [], x, logits, cfg)
        alone = expert_forward(experts[0], SelectedInput.from_tokens(x, np.arange(20)), cfg)
        np.testing.assert_array_equal(out, alone.data)

    def test_zero_routed_weights_leave_shared(self, small, rng):
        cfg, experts, _, x, logits = small
        cfg2 = MoEConfig(4, 2, 64, 128, num_shared=2)
        shared = [ExpertWeights.random(cfg2, FMT, rng) for _ in range(2)]
        r = route_tokens(logits, 2)
        zeroed = RoutingResult(r.experts, np.zeros_like(r.weights), r.sel)
        out = moe_forward(experts, shared, x, None, cfg2, routing=zeroed)
        xs = SelectedInput.from_tokens(x, np.arange(50))
        want = sum(oracles.gated_mlp(*dense_parts(s), x, "silu") for s in shared)
        assert np.abs(out - want).max() <= 1e-4
        direct = expert_forward(shared[0], xs, cfg2).data + expert_forward(shared[1], xs, cfg2).data
        np.testing.assert_allclose(out, direct, atol=1e-6)

    def test_empty_expert_skipped(self, small):
        cfg, experts, shared, x, logits = small
        logits = logits.copy()
        logits[:, 3] = -100.0  # expert 3 never chosen
        r = route_tokens(logits, 2)
        assert r.sel[3].size == 0
        out = moe_forward(experts, shared, x, logits, cfg)
        want = oracles.textbook_moe([dense_parts(e) for e in experts], [dense_parts(s) for s in shared],
                                    x, logits, 2, "silu")
        assert np.abs(out - want).max() <= 1e-4

    def test_token_order_independence(self, small, rng):
        cfg, experts, shared, x, logits = small
        perm = rng.permutation(50)
        a = moe_forward(experts, shared, x, logits, cfg)
        b = moe_forward(experts, shared, x[perm], logits[perm], cfg)
        np.testing.assert_array_equal(b, a[perm])

    def test_threads_bitwise(self, small):
        cfg, experts, shared, x, logits = small
        np.testing.assert_array_equal(moe_forward(experts, shared, x, logits, cfg, threads=4),
                                      moe_forward(experts, shared, x, logits, cfg, threads=1))

    def test_errors(self, small):
        cfg, experts, shared, x, logits = small
        with pytest.raises(ShapeError):
            moe_forward(experts[:3], shared, x, logits, cfg)
        with pytest.raises(ShapeError):
            moe_forward(experts, [], x, logits, cfg)
        with pytest.raises(ShapeError):
            moe_forward(experts, shared, x[:, :32], logits, cfg)
        with pytest.raises(ShapeError):
            moe_forward(experts, shared, x, logits[:10], cfg)
