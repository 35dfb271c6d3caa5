import numpy as np
import pytest

from sgnet import numerics as nx
from sgnet.encoder import (
    ModelConfig,
    count_params,
    dual_aggregate,
    embed,
    encode,
    init_params,
    sg_attention_layer,
    sg_layer_shapes,
    transformer_layer,
)
from sgnet.numerics import Parameter, Tensor, grad_check
from sgnet.sdoi import build_sdoi_mask
from sgnet.synthetic import example_mask, structural_ids

from .helpers import random_tree

CFG = ModelConfig(seed=3)


@pytest.fixture(scope="module")
def params():
    return init_params(CFG)


def sample(rng, n_words=6):
    tree = random_tree(rng, n_words)
    return tree, structural_ids(tree), example_mask(tree).bits


class TestConfig:
    def test_rejects_mismatched_query_key_width(self):
        with pytest.raises(ValueError):
            ModelConfig(d_k=8, d_q=16)

    def test_rejects_alpha_outside_unit_interval(self):
        with pytest.raises(ValueError):
            ModelConfig(alpha=1.5)

    def test_round_trip(self):
        assert ModelConfig.from_dict(CFG.to_dict()) == CFG


class TestEmbed:
    def test_single_token_is_sum(self, params):
        out = embed([7], CFG, params).data
        expect = params["emb.token"].data[7] + params["emb.position"].data[0] + params["emb.type"].data[0]
        assert np.array_equal(out[0], expect)

    def test_same_token_different_positions(self, params):
        out = embed([9, 9], CFG, params).data
        assert not np.array_equal(out[0], out[1])
        flat = {k: Parameter(v.data.copy(), k) for k, v in params.items()}
        flat["emb.position"].data[:] = 0.0
        out = embed([9, 9], CFG, flat).data
        assert np.array_equal(out[0], out[1])

    def test_zero_tables(self, params):
        zero = {k: Parameter(np.zeros_like(v.data), k) for k, v in params.items()}
        assert not embed([1, 2, 3], CFG, zero).data.any()

    def test_range_checks(self, params):
        with pytest.raises(ValueError):
            embed([CFG.vocab_size], CFG, params)
        with pytest.raises(ValueError):
            embed([4] * (CFG.max_len + 1), CFG, params)


class TestTransformerLayer:
    def test_single_position_attention(self, params):
        x = Tensor(np.random.default_rng(0).normal(size=(1, CFG.d_model)))
        _, attn = transformer_layer(x, params, 0, CFG)
        assert np.array_equal(attn, np.ones((CFG.n_heads, 1, 1)))

    def test_permutation_equivariance(self, params):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(7, CFG.d_model))
        perm = rng.permutation(7)
        out, _ = transformer_layer(Tensor(x), params, 0, CFG)
        out_p, _ = transformer_layer(Tensor(x[perm]), params, 0, CFG)
        np.testing.assert_allclose(out_p.data, out.data[perm], rtol=0, atol=1e-12)

    def test_rows_sum_to_one(self, params):
        x = Tensor(np.random.default_rng(2).normal(size=(5, CFG.d_model)))
        _, attn = transformer_layer(x, params, 1, CFG)
        assert np.abs(attn.sum(axis=-1) - 1).max() <= 1e-12

    def test_gradient(self):
        cfg = ModelConfig(d_model=8, d_ff=12, d_k=4, d_q=4, d_v=4, seed=4)
        p = init_params(cfg, with_sg=False)
        rng = np.random.default_rng(4)
        for v in p.values():
            v.data += rng.normal(scale=0.05, size=v.shape)
        x = Parameter(rng.normal(size=(4, 8)), "x")
        w = rng.normal(size=(4, 8))
        layer = [v for k, v in p.items() if k.startswith("layer0")]
        err = grad_check(lambda: nx.tsum(nx.mul(transformer_layer(x, p, 0, cfg)[0], w)), layer + [x])
        assert err < 1e-5

    def test_width_mismatch(self, params):
        with pytest.raises(ValueError):
            transformer_layer(Tensor(np.zeros((3, 5))), params, 0, CFG)


class TestSgLayer:
    def test_identity_mask_gives_identity_attention(self, params):
        H = Tensor(np.random.default_rng(5).normal(size=(6, CFG.d_model)))
        _, attn = sg_attention_layer(H, np.eye(6, dtype=bool), params, CFG)
        assert np.array_equal(attn, np.broadcast_to(np.eye(6), attn.shape))

    def test_all_ones_mask_is_neutral(self, params):
        from sgnet.encoder import multi_head
        H = Tensor(np.random.default_rng(6).normal(size=(6, CFG.d_model)))
        _, attn = sg_attention_layer(H, np.ones((6, 6), dtype=bool), params, CFG)
        _, plain = multi_head(H, H, params, "sg", CFG)
        assert np.array_equal(attn, plain)

    def test_credit_row_support(self, params, credit_tree):
        mask = build_sdoi_mask(credit_tree, {0})
        H = Tensor(np.random.default_rng(7).normal(size=(mask.n, CFG.d_model)))
        _, attn = sg_attention_layer(H, mask, params, CFG)
        for h in range(CFG.n_heads):
            assert set(np.flatnonzero(attn[h, 4]).tolist()) == {2, 4, 5}

    def test_literal_multiply_does_not_exclude(self, params):
        cfg = ModelConfig(seed=3, mask_mode="literal-multiply")
        H = Tensor(np.random.default_rng(8).normal(size=(4, cfg.d_model)))
        _, attn = sg_attention_layer(H, np.eye(4, dtype=bool), params, cfg)
        # masked logits become 0 rather than -inf, so off-diagonal mass survives
        assert (attn[:, 0, 1:] > 0).all()

    def test_empty_row_rejected(self, params):
        mask = np.eye(3, dtype=bool)
        mask[1, 1] = False
        with pytest.raises(ValueError):
            sg_attention_layer(Tensor(np.zeros((3, CFG.d_model))), mask, params, CFG)

    def test_mask_size_mismatch(self, params):
        with pytest.raises(ValueError):
            sg_attention_layer(Tensor(np.zeros((3, CFG.d_model))), np.eye(4, dtype=bool), params, CFG)

    def test_unit_rows_do_not_mix_positions(self, params):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(6, CFG.d_model))
        bumped = base.copy()
        bumped[3] += rng.normal(size=CFG.d_model)
        out0, _ = sg_attention_layer(Tensor(base), np.eye(6, dtype=bool), params, CFG)
        out1, _ = sg_attention_layer(Tensor(bumped), np.eye(6, dtype=bool), params, CFG)
        changed = np.flatnonzero(np.abs(out0.data - out1.data).max(axis=1) > 0)
        assert changed.tolist() == [3]


class TestDualAggregate:
    def test_endpoints_exact(self):
        rng = np.random.default_rng(10)
        H, Hp = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
        assert dual_aggregate(H, Hp, 1.0).data.tobytes() == H.data.tobytes()
        assert dual_aggregate(H, Hp, 0.0).data.tobytes() == Hp.data.tobytes()

    def test_midpoint_default(self):
        rng = np.random.default_rng(11)
        H, Hp = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
        assert ModelConfig().alpha == 0.5
        np.testing.assert_allclose(dual_aggregate(H, Hp, 0.5).data, (H.data + Hp.data) / 2, rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dual_aggregate(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))), 0.5)


class TestEncode:
    def test_alpha_one_matches_vanilla(self, params):
        rng = np.random.default_rng(12)
        _, ids, mask = sample(rng)
        cfg = ModelConfig(seed=3, alpha=1.0)
        vanilla = {k: v for k, v in params.items() if not k.startswith("sg.")}
        sg = encode(ids, mask, cfg, params)
        base = encode(ids, mask, cfg, vanilla)
        assert sg.H_bar.data.tobytes() == base.H_bar.data.tobytes()

    def test_sg_attention_zero_off_mask(self, params):
        rng = np.random.default_rng(13)
        _, ids, mask = sample(rng, 10)
        out = encode(ids, mask, CFG, params)
        assert (out.attn_sg[:, ~mask] == 0).all()
        for attn in out.attn_vanilla + [out.attn_sg]:
            assert np.abs(attn.sum(axis=-1) - 1).max() <= 1e-12

    def test_all_ones_alpha_zero_is_plain_extra_layer(self, params):
        from sgnet.encoder import vanilla_encode
        rng = np.random.default_rng(14)
        _, ids, _ = sample(rng)
        cfg = ModelConfig(seed=3, alpha=0.0)
        n = len(ids)
        out = encode(ids, np.ones((n, n), dtype=bool), cfg, params)
        H, _ = vanilla_encode(ids, cfg, params)
        # the same parameters run as an unrestricted attention layer
        from sgnet.encoder import multi_head
        heads, _ = multi_head(H, H, params, "sg", cfg)
        ff = nx.gelu(heads @ params["sg.ff1.w"] + params["sg.ff1.b"]) @ params["sg.ff2.w"] + params["sg.ff2.b"]
        manual = nx.layer_norm(ff + H, params["sg.ln.gain"], params["sg.ln.bias"])
        assert out.H_bar.data.tobytes() == manual.data.tobytes()

    def test_extra_parameters_are_one_sg_layer(self):
        cfg = ModelConfig(seed=0)
        extra = count_params(init_params(cfg)) - count_params(init_params(cfg, with_sg=False))
        M, d, dk, dv, dff = cfg.n_heads, cfg.d_model, cfg.d_k, cfg.d_v, cfg.d_ff
        by_hand = 2 * d * M * dk + d * M * dv + (M * dv * dff + dff) + (dff * d + d) + 2 * d
        assert extra == by_hand == sum(int(np.prod(s)) for s in sg_layer_shapes(cfg).values())

    def test_deterministic(self):
        rng = np.random.default_rng(15)
        _, ids, mask = sample(rng)
        a = encode(ids, mask, CFG, init_params(CFG))
        b = encode(ids, mask, CFG, init_params(CFG))
        assert a.H_bar.data.tobytes() == b.H_bar.data.tobytes()
        assert a.attn_sg.tobytes() == b.attn_sg.tobytes()

    def test_padding_does_not_leak(self, params):
        rng = np.random.default_rng(16)
        examples = [sample(rng, n) for n in (3, 7)]
        N = 8
        ids = np.zeros((2, N), dtype=np.int64)
        pad = np.zeros((2, N), dtype=bool)
        sdoi = np.broadcast_to(np.eye(N, dtype=bool), (2, N, N)).copy()
        for b, (_, i, m) in enumerate(examples):
            ids[b, :len(i)] = i
            pad[b, :len(i)] = True
            sdoi[b, :len(i), :len(i)] = m
        batched = encode(ids, sdoi, CFG, params, pad_mask=pad)
        for b, (_, i, m) in enumerate(examples):
            single = encode(i, m, CFG, params)
            np.testing.assert_allclose(batched.H_bar.data[b, :len(i)], single.H_bar.data, rtol=0, atol=1e-12)

    def test_full_model_gradient(self):
        from sgnet.checks import model_case
        cfg = ModelConfig(n_layers=2, n_heads=2, d_model=8, d_ff=12, d_k=4, d_q=4, d_v=4, seed=5)
        f, plist = model_case(cfg, 5)
        assert grad_check(f, plist) < 1e-4
