import numpy as np
import pytest
import mpmath as mp
from hypothesis import given, settings, strategies as st

from selfother import tensor as T
from selfother.tensor import Tape, Tensor
from selfother.corpus import assemble_encoder_input
from selfother.encoder import ContextStates, FeedForwardParams, LayerNormParams
from selfother.modulation import (GateParams, cross_attend, fuse_pair,
                                  fuse_states, gate_combine, modulate, refine_slice,
                                  tile_rows)
from selfother.network import ResponderNetwork

from oracles import (FD_STEP, finite_difference, multi_head_attention_oracle,
                     relative_errors)

mp.mp.dps = 50


def make_gate(rng, d_in, d_out) -> GateParams:
    return GateParams(weight=T.parameter(T.glorot(rng, d_in, d_out)),
                      bias=T.parameter(rng.normal(0, 0.1, (1, d_out))))


def make_ffn(rng, d_in, d_mid, d_out) -> FeedForwardParams:
    return FeedForwardParams(w1=T.parameter(T.glorot(rng, d_in, d_mid)),
                             b1=T.parameter(rng.normal(0, 0.1, (1, d_mid))),
                             w2=T.parameter(T.glorot(rng, d_mid, d_out)),
                             b2=T.parameter(rng.normal(0, 0.1, (1, d_out))))


def context_of(sample, vocab, rng, dim=8):
    inp = assemble_encoder_input(sample, vocab)
    states = Tensor(rng.normal(size=(len(inp), dim)))
    return ContextStates(states=states, input=inp)


class TestFuseStates:
    def test_equal_states_pass_through_any_gate(self, rng):
        v = Tensor(rng.normal(size=(1, 8)))
        fused, g = fuse_pair(v, v, make_gate(rng, 16, 8))
        assert np.allclose(fused.data, v.data, atol=1e-12)
        assert ((g.data > 0) & (g.data < 1)).all()

    def test_gate_saturation_selects_emotional(self, rng):
        emotional = Tensor(rng.normal(size=(1, 8)))
        cognitive = Tensor(rng.normal(size=(1, 8)))
        gate = GateParams(weight=T.parameter(np.zeros((16, 8))),
                          bias=T.parameter(np.full((1, 8), 30.0)))
        fused, g = fuse_pair(emotional, cognitive, gate)
        assert (g.data > 0.999999).all()
        assert np.allclose(fused.data, emotional.data, atol=1e-9)

    def test_fixture_matches_hand_blend_oracle(self, rng):
        dim = 4
        emotional = rng.normal(size=(1, dim))
        cognitive = rng.normal(size=(1, dim))
        w = rng.normal(size=(2 * dim, dim))
        b = rng.normal(size=(1, dim))
        gate = GateParams(weight=T.parameter(w), bias=T.parameter(b))
        fused, _ = fuse_pair(Tensor(emotional), Tensor(cognitive), gate)
        z = np.concatenate([emotional, cognitive], axis=1) @ w + b
        g = np.array([[float(1 / (1 + mp.e ** (-mp.mpf(float(v))))) for v in z[0]]])
        expected = g * emotional + (1 - g) * cognitive
        assert np.max(np.abs(fused.data - expected)) < 1e-12

    def test_pair_assembly(self, rng):
        vs = [Tensor(rng.normal(size=(1, 8))) for _ in range(4)]
        pair = fuse_states(*vs, make_gate(rng, 16, 8), make_gate(rng, 16, 8))
        for g in (pair.self_gate, pair.other_gate):
            assert ((g.data > 0) & (g.data < 1)).all()


class TestRefine:
    def test_empty_slice_returns_none(self, rng):
        states = Tensor(rng.normal(size=(4, 8)))
        out = refine_slice(states, np.array([], dtype=np.intp),
                           Tensor(rng.normal(size=(1, 8))), make_ffn(rng, 16, 8, 8))
        assert out is None

    def test_zero_map_rows_equal_final_bias(self, rng):
        states = Tensor(rng.normal(size=(4, 8)))
        ffn = FeedForwardParams(w1=T.parameter(np.zeros((16, 8))),
                                b1=T.parameter(np.zeros((1, 8))),
                                w2=T.parameter(np.zeros((8, 8))),
                                b2=T.parameter(rng.normal(size=(1, 8))))
        out = refine_slice(states, np.array([0, 2]), Tensor(rng.normal(size=(1, 8))), ffn)
        assert np.allclose(out.data, np.broadcast_to(ffn.b2.data, (2, 8)))

    def test_two_token_fixture_matches_composed_oracle(self, rng):
        dim = 4
        states = rng.normal(size=(5, dim))
        awareness = rng.normal(size=(1, dim))
        ffn = make_ffn(rng, 2 * dim, dim, dim)
        indices = np.array([1, 3])
        got = refine_slice(Tensor(states), indices, Tensor(awareness), ffn).data
        stacked = np.concatenate([np.repeat(awareness, 2, axis=0), states[indices]], axis=1)
        hidden = np.maximum(stacked @ ffn.w1.data + ffn.b1.data, 0.0)
        expected = hidden @ ffn.w2.data + ffn.b2.data
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_tile_rows_gradient_sums(self, rng):
        v = T.parameter(rng.normal(size=(1, 4)))
        with Tape() as tape:
            tape.backward(T.tensor_sum(tile_rows(v, 5)))
        assert np.allclose(v.grad, 5.0)


class TestModulate:
    def _context(self, rng, toy_vocab, two_turn_sample):
        return context_of(two_turn_sample, toy_vocab, rng)

    def _attn(self, rng, dim=8):
        from test_encoder import make_attention
        return make_attention(rng, dim)

    def _ln(self, dim=8):
        return LayerNormParams(gain=T.parameter(np.ones((1, dim))),
                               bias=T.parameter(np.zeros((1, dim))))

    def test_single_key_rows_share_attention_output(self, rng, toy_vocab, two_turn_sample):
        context = self._context(rng, toy_vocab, two_turn_sample)
        attn = self._attn(rng)
        refined = Tensor(rng.normal(size=(1, 8)))
        mixed_rows = []
        from selfother.encoder import multi_head_attention
        mixed = multi_head_attention(attn, context.states, refined, heads=2)
        # with one key every attention row is that key's value path
        assert np.allclose(mixed.data, np.broadcast_to(mixed.data[0], mixed.shape), atol=1e-12)
        out = cross_attend(context, refined, attn, self._ln(), heads=2)
        assert out.shape == context.states.shape

    def test_equal_branches_pass_through_gate(self, rng):
        x = Tensor(rng.normal(size=(6, 8)))
        combined, g = gate_combine(x, x, make_gate(rng, 16, 8))
        assert np.allclose(combined.data, x.data, atol=1e-12)
        assert ((g.data > 0) & (g.data < 1)).all()

    def test_cross_attention_matches_oracle(self, rng):
        queries = rng.normal(size=(3, 8))
        keys = rng.normal(size=(2, 8))
        attn = self._attn(rng)
        from selfother.encoder import multi_head_attention
        got = multi_head_attention(attn, Tensor(queries), Tensor(keys), heads=2).data
        weights = {k: getattr(attn, k).data
                   for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
        expected = multi_head_attention_oracle(weights, queries, keys, heads=2, scaled=True)
        assert np.max(np.abs(got - expected)) < 1e-6

    def test_cross_attention_rows_sum_to_one(self, rng, toy_vocab, two_turn_sample):
        context = self._context(rng, toy_vocab, two_turn_sample)
        attn = self._attn(rng)
        refined = Tensor(rng.normal(size=(3, 8)))
        collected: list = []
        from selfother.encoder import multi_head_attention
        multi_head_attention(attn, context.states, refined, heads=2, weights_out=collected)
        for w in collected:
            assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-9)

    def test_empty_self_branch_zero_convention(self, rng, toy_vocab, first_turn_sample):
        context = context_of(first_turn_sample, toy_vocab, rng)
        refined_other = Tensor(rng.normal(size=(4, 8)))
        gate = make_gate(rng, 16, 8)
        mod = modulate(context, None, refined_other, self._attn(rng), self._ln(),
                       self._attn(rng), self._ln(), gate, heads=2)
        assert np.all(mod.self_branch.data == 0.0)
        # convex combination pins the result between the branches
        assert np.all(mod.context.data <= np.maximum(mod.self_branch.data,
                                                     mod.other_branch.data) + 1e-12)
        assert np.all(mod.context.data >= np.minimum(mod.self_branch.data,
                                                     mod.other_branch.data) - 1e-12)

    def test_empty_self_branch_other_only_convention(self, rng, toy_vocab, first_turn_sample):
        context = context_of(first_turn_sample, toy_vocab, rng)
        refined_other = Tensor(rng.normal(size=(4, 8)))
        other_attn, other_ln = self._attn(rng), self._ln()
        mod = modulate(context, None, refined_other, self._attn(rng), self._ln(),
                       other_attn, other_ln, make_gate(rng, 16, 8), heads=2,
                       empty_slice_mode="other_only")
        expected = cross_attend(context, refined_other, other_attn, other_ln, heads=2)
        assert np.array_equal(mod.context.data, expected.data)

    def test_both_branches_empty_is_contract_error(self, rng, toy_vocab, first_turn_sample):
        context = context_of(first_turn_sample, toy_vocab, rng)
        with pytest.raises(ValueError, match="empty"):
            modulate(context, None, None, self._attn(rng), self._ln(),
                     self._attn(rng), self._ln(), make_gate(rng, 16, 8), heads=2)

    def test_gate_stays_strictly_inside_unit_interval(self, rng, toy_vocab, two_turn_sample):
        context = self._context(rng, toy_vocab, two_turn_sample)
        mod = modulate(context,
                       Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(5, 8))),
                       self._attn(rng), self._ln(), self._attn(rng), self._ln(),
                       make_gate(rng, 16, 8), heads=2)
        assert ((mod.gate.data > 0) & (mod.gate.data < 1)).all()


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_gates_always_strictly_inside_unit_interval(seed):
    # pre-activations stay below ~16, where float64 sigmoid is still strict
    rng = np.random.default_rng(seed)
    emotional = Tensor(rng.uniform(-3, 3, (1, 8)))
    cognitive = Tensor(rng.uniform(-3, 3, (1, 8)))
    gate = GateParams(weight=T.parameter(rng.uniform(-0.3, 0.3, (16, 8))),
                      bias=T.parameter(rng.uniform(-1, 1, (1, 8))))
    fused, g = fuse_pair(emotional, cognitive, gate)
    assert ((g.data > 0) & (g.data < 1)).all()
    # convex combination stays between the two inputs, elementwise
    lo = np.minimum(emotional.data, cognitive.data)
    hi = np.maximum(emotional.data, cognitive.data)
    assert ((fused.data >= lo - 1e-12) & (fused.data <= hi + 1e-12)).all()


def test_full_modulation_gradient_check(toy_config, toy_vocab, toy_store, two_turn_sample):
    net = ResponderNetwork(toy_config, toy_vocab, store=toy_store, variant="full", seed=11)
    probe = np.random.default_rng(0).normal(size=(8, 8))

    def forward():
        context = net._encode(two_turn_sample, train=False)
        states, _ = net._differentiate(two_turn_sample, context)
        aw_self, aw_other, _ = net._awareness(states)
        memory, _ = net._modulate(context, aw_self, aw_other)
        return T.tensor_sum(T.mul(memory, T.constant(probe[: memory.shape[0]])))

    names = [n for n in net.params if n.startswith("som.")]
    T.zero_grads(net.params.values())
    with Tape() as tape:
        tape.backward(forward())
    for name in names:
        p = net.params[name]
        fd = finite_difference(lambda: forward().item(), p.data, FD_STEP)
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        err = relative_errors(analytic, fd).max()
        assert err < 1e-4, f"{name}: {err}"
