import math

import numpy as np
import pytest

from selfother import tensor as T
from selfother.tensor import Tape, Tensor
from selfother.corpus import DialogueSample, assemble_encoder_input, build_vocabulary
from selfother.differentiation import (AwarenessGraph, GraphAttentionLayerParams,
                                       build_graph, build_graphs, differentiate,
                                       emotion_loss, graph_attention_layer,
                                       perceive_emotion, run_layers)
from selfother.encoder import LayerNormParams
from selfother.knowledge import ALL_RELATIONS, KnowledgeStore
from selfother.network import ResponderNetwork

from oracles import FD_STEP, attention_oracle, finite_difference, relative_errors, softmax_oracle

LN_EPS = 1e-5


def make_gat_layer(rng, dim) -> GraphAttentionLayerParams:
    return GraphAttentionLayerParams(
        wq=T.parameter(T.glorot(rng, dim, dim)),
        wk=T.parameter(T.glorot(rng, dim, dim)),
        wv=T.parameter(T.glorot(rng, dim, dim)),
        ln=LayerNormParams(gain=T.parameter(np.ones((1, dim))),
                           bias=T.parameter(np.zeros((1, dim)))))


def layer_norm_np(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def graph_layer_oracle(nodes, adjacency, layer, heads):
    """Dense adjacency-masked multi-head attention, residual, norm."""
    n, dim = nodes.shape
    width = dim // heads
    q = nodes @ layer.wq.data
    k = nodes @ layer.wk.data
    v = nodes @ layer.wv.data
    outs = []
    for h in range(heads):
        sl = slice(h * width, (h + 1) * width)
        outs.append(attention_oracle(q[:, sl], k[:, sl], v[:, sl],
                                     mask=adjacency, scaled=False))
    updated = layer_norm_np(nodes + np.concatenate(outs, axis=1))
    isolated = ~adjacency.any(axis=1)
    updated[isolated] = nodes[isolated]
    return updated


class TestStructure:
    @pytest.mark.parametrize("k,nodes,edges", [(2, 8, 13), (1, 5, 6), (0, 2, 0)])
    def test_known_counts(self, rng, toy_store, k, nodes, edges):
        utterances = tuple(("self", (f"t{i}",)) for i in range(k)) + (("other", ("end",)),)
        sample = DialogueSample("d1", utterances, "sad", ("x",))
        vocab = build_vocabulary([sample])
        store = KnowledgeStore.synthetic([sample], dim=4, seed=0)
        store.attach_projection(T.parameter(T.glorot(rng, 4, 8)),
                                T.parameter(np.zeros((1, 8))))
        context = _encode_stub(sample, vocab, rng)
        graph = build_graph("self", sample, context, store,
                            T.parameter(rng.normal(size=(1, 8))),
                            T.parameter(rng.normal(size=(1, 8))))
        assert graph.node_count == nodes
        assert graph.edge_count == edges

    @pytest.mark.parametrize("k", range(7))
    def test_closed_forms_for_all_k(self, rng, k):
        from selfother.differentiation import _adjacency
        adj = _adjacency(k)
        assert adj.shape == (3 * k + 2, 3 * k + 2)
        assert int(np.triu(adj, 1).sum()) == (7 * k - 1 if k >= 1 else 0)
        assert np.array_equal(adj, adj.T)
        assert not adj.diagonal().any()


def _encode_stub(sample, vocab, rng):
    """Encoder states without running the encoder: random but deterministic."""
    from selfother.encoder import ContextStates
    inp = assemble_encoder_input(sample, vocab)
    states = Tensor(np.random.default_rng(0).normal(size=(len(inp), 8)))
    return ContextStates(states=states, input=inp)


class TestGraphAttention:
    def test_single_neighbor_weight_is_one(self, rng):
        layer = make_gat_layer(rng, 8)
        nodes = Tensor(rng.normal(size=(2, 8)))
        adjacency = np.array([[False, True], [True, False]])
        graph = AwarenessGraph("self", nodes, adjacency, utterance_count=0)
        collected: list = []
        out = graph_attention_layer(graph, layer, heads=2, weights_out=collected)
        for w in collected:
            assert np.allclose(w[0, 1], 1.0) and np.allclose(w[1, 0], 1.0)
        # update for node 0 is LN(v0 + concat_h(Wv_h v1))
        v1 = nodes.data[1] @ layer.wv.data
        expected = layer_norm_np((nodes.data[0] + v1)[None, :])
        assert np.allclose(out.nodes.data[0], expected[0], atol=1e-12)

    def test_neighbor_relabeling_is_symmetric(self, rng):
        layer = make_gat_layer(rng, 8)
        base = rng.normal(size=(5, 8))
        adjacency = np.zeros((5, 5), dtype=bool)
        adjacency[0, 1:] = adjacency[1:, 0] = True   # star around node 0
        g1 = AwarenessGraph("self", Tensor(base), adjacency, 1)
        out1 = graph_attention_layer(g1, layer, heads=2).nodes.data[0]
        perm = [0, 3, 1, 4, 2]                        # relabel the leaves
        g2 = AwarenessGraph("self", Tensor(base[perm]), adjacency, 1)
        out2 = graph_attention_layer(g2, layer, heads=2).nodes.data[0]
        assert np.max(np.abs(out1 - out2)) < 1e-9

    def test_matches_dense_masked_oracle_on_fixture(self, rng):
        layer = make_gat_layer(rng, 8)
        nodes = rng.normal(size=(4, 8))
        adjacency = np.zeros((4, 4), dtype=bool)
        adjacency[0, 1] = adjacency[1, 0] = True
        adjacency[1, 2] = adjacency[2, 1] = True      # node 3 isolated
        graph = AwarenessGraph("self", Tensor(nodes.copy()), adjacency, 0)
        got = graph_attention_layer(graph, layer, heads=2).nodes.data
        expected = graph_layer_oracle(nodes, adjacency, layer, heads=2)
        assert np.max(np.abs(got - expected)) < 1e-6

    def test_alpha_rows_sum_to_one_per_head(self, rng):
        layer = make_gat_layer(rng, 8)
        from selfother.differentiation import _adjacency
        adjacency = _adjacency(3)
        nodes = Tensor(rng.normal(size=(adjacency.shape[0], 8)))
        graph = AwarenessGraph("self", nodes, adjacency, 3)
        collected: list = []
        graph_attention_layer(graph, layer, heads=2, weights_out=collected)
        for w in collected:
            connected = adjacency.any(axis=1)
            assert np.allclose(w[connected].sum(axis=-1), 1.0, atol=1e-9)
            assert np.all(w[:, ~adjacency[0]][0] == 0.0)   # only neighbors attended


class TestDifferentiate:
    def _network(self, toy_config, toy_vocab, toy_store, seed=3):
        return ResponderNetwork(toy_config, toy_vocab, store=toy_store,
                                variant="full", seed=seed)

    def test_degenerate_graph_keeps_state_embeddings(self, rng, first_turn_sample,
                                                     toy_config, toy_vocab, toy_store):
        net = self._network(toy_config, toy_vocab, toy_store)
        context = net._encode(first_turn_sample, train=False)
        g_self, g_other = build_graphs(first_turn_sample, context, net.store,
                                       net.state_params["self"], net.state_params["other"])
        assert g_self.node_count == 2 and g_self.edge_count == 0
        out = run_layers(g_self, net.graph_layers, heads=2)
        s_e, s_c = out.state_vectors()
        assert np.array_equal(s_e.data, net.params["sod.state.self_emotional"].data)
        assert np.array_equal(s_c.data, net.params["sod.state.self_cognitive"].data)

    def test_knowledge_reaches_state_nodes(self, two_turn_sample, toy_config,
                                           toy_vocab, toy_samples):
        zero_store = KnowledgeStore(
            {(s.id, i, r.value): _zero_entry(s.id, i, r)
             for s in toy_samples for i in range(len(s.utterances)) for r in ALL_RELATIONS},
            dim=6)
        live_store = KnowledgeStore.synthetic(toy_samples, dim=6, seed=0)
        outs = []
        for store in (zero_store, live_store):
            net = ResponderNetwork(toy_config, toy_vocab, store=store, variant="full", seed=3)
            context = net._encode(two_turn_sample, train=False)
            states, _ = net._differentiate(two_turn_sample, context)
            outs.append(np.concatenate([s.data for s in states], axis=None))
        assert not np.allclose(outs[0], outs[1])

    def test_one_layer_equals_manual_application(self, rng, two_turn_sample,
                                                 toy_config, toy_vocab, toy_store):
        net = self._network(toy_config, toy_vocab, toy_store)
        context = net._encode(two_turn_sample, train=False)
        g_self, g_other = build_graphs(two_turn_sample, context, net.store,
                                       net.state_params["self"], net.state_params["other"])
        s_e, s_c, o_e, o_c = differentiate(g_self, g_other, net.graph_layers, heads=2)
        manual_self = graph_attention_layer(g_self, net.graph_layers[0], heads=2)
        manual_other = graph_attention_layer(g_other, net.graph_layers[0], heads=2)
        assert np.array_equal(s_e.data, manual_self.state_vectors()[0].data)
        assert np.array_equal(o_c.data, manual_other.state_vectors()[1].data)

    def test_sides_never_exchange_information(self, two_turn_sample, toy_config,
                                              toy_vocab, toy_samples):
        """Perturbing self-side knowledge leaves the other side bit-identical."""
        base_store = KnowledgeStore.synthetic(toy_samples, dim=6, seed=0)
        bumped = {}
        for s in toy_samples:
            for i in range(len(s.utterances)):
                for r in ALL_RELATIONS:
                    vec = base_store.get(s.id, i, r).copy()
                    # utterance 0 of d1 belongs to the self side
                    if s.id == "d1" and i == 0:
                        vec += 0.37
                    bumped[(s.id, i, r.value)] = _entry(s.id, i, r, vec)
        bump_store = KnowledgeStore(bumped, dim=6)
        net = self._network(toy_config, toy_vocab, base_store)

        def states_with(store):
            store.attach_projection(net.params["knowledge.projection.weight"],
                                    net.params["knowledge.projection.bias"])
            net.store = store
            context = net._encode(two_turn_sample, train=False)
            return net._differentiate(two_turn_sample, context)[0]

        s_e0, s_c0, o_e0, o_c0 = states_with(base_store)
        s_e1, s_c1, o_e1, o_c1 = states_with(bump_store)
        assert not np.array_equal(s_e0.data, s_e1.data)
        assert not np.array_equal(s_c0.data, s_c1.data)
        assert np.array_equal(o_e0.data, o_e1.data)      # bit-identical
        assert np.array_equal(o_c0.data, o_c1.data)

    def test_role_swap_symmetry_with_tied_initializations(self, toy_config, toy_vocab,
                                                          toy_samples):
        """Mirroring the dialogue swaps the state pairs when the role-dependent
        parameters are tied."""
        store = KnowledgeStore.synthetic(toy_samples, dim=6, seed=0)
        net = ResponderNetwork(toy_config, toy_vocab, store=store, variant="full", seed=3)
        # tie everything that distinguishes the two roles
        p = net.params
        p["sod.state.other_emotional"].data = p["sod.state.self_emotional"].data.copy()
        p["sod.state.other_cognitive"].data = p["sod.state.self_cognitive"].data.copy()
        p["embedding.role"].data[1] = p["embedding.role"].data[0]
        p["embedding.word"].data[toy_vocab.oth_id] = p["embedding.word"].data[toy_vocab.slf_id]

        original = DialogueSample("d1", (("self", ("hello", "there")),
                                         ("other", ("i", "feel", "sad", "today"))),
                                  "sad", ("x",))
        mirrored = DialogueSample("d1", (("other", ("hello", "there")),
                                         ("self", ("i", "feel", "sad", "today"))),
                                  "sad", ("x",))

        def states_of(sample):
            context = net._encode(sample, train=False)
            return net._differentiate(sample, context)[0]

        s_e, s_c, o_e, o_c = states_of(original)
        ms_e, ms_c, mo_e, mo_c = states_of(mirrored)
        assert np.allclose(s_e.data, mo_e.data, atol=1e-12)
        assert np.allclose(s_c.data, mo_c.data, atol=1e-12)
        assert np.allclose(o_e.data, ms_e.data, atol=1e-12)
        assert np.allclose(o_c.data, ms_c.data, atol=1e-12)


def _entry(dialogue_id, utt_index, relation, vector):
    from selfother.knowledge import KnowledgeEntry
    return KnowledgeEntry(dialogue_id=dialogue_id, utt_index=utt_index,
                          relation=relation, vector=np.asarray(vector, dtype=np.float64))


def _zero_entry(dialogue_id, utt_index, relation):
    return _entry(dialogue_id, utt_index, relation, np.zeros(6))


class TestEmotionPerception:
    def test_zero_classifier_gives_uniform(self, rng, toy_vocab, two_turn_sample):
        context = _encode_stub(two_turn_sample, toy_vocab, rng)
        w = T.parameter(np.zeros((8, 32)))
        p = perceive_emotion(context, None, w)
        assert np.allclose(p.data, 1.0 / 32)

    def test_single_marker_mean_is_that_state(self, rng, toy_vocab, first_turn_sample):
        context = _encode_stub(first_turn_sample, toy_vocab, rng)
        w = T.parameter(rng.normal(size=(8, 32)))
        oth = context.input.other_marker_indices()
        assert oth.size == 1
        expected_h = context.states.data[oth[0]]
        got = perceive_emotion(context, None, w)
        assert np.allclose(got.data, softmax_oracle(expected_h @ w.data), atol=1e-9)

    def test_matches_softmax_oracle_with_state(self, rng, toy_vocab, two_turn_sample):
        context = _encode_stub(two_turn_sample, toy_vocab, rng)
        state = Tensor(rng.normal(size=(1, 8)))
        w = T.parameter(rng.normal(size=(8, 32)))
        oth = context.input.other_marker_indices()
        h = context.states.data[oth].mean(axis=0) + state.data[0]
        got = perceive_emotion(context, state, w)
        assert np.max(np.abs(got.data - softmax_oracle(h @ w.data))) < 1e-9

    def test_no_other_markers_is_contract_error(self, rng, toy_vocab):
        sample = DialogueSample("d", (("self", ("a",)),), "sad", ("x",))
        context = _encode_stub(sample, toy_vocab, rng)
        with pytest.raises(ValueError, match="other"):
            perceive_emotion(context, None, T.parameter(np.zeros((8, 32))))


class TestEmotionLoss:
    def test_uniform_gives_log32(self):
        p = Tensor(np.full((1, 32), 1.0 / 32))
        assert abs(emotion_loss(p, 5).item() - math.log(32)) < 1e-9

    def test_certain_prediction_gives_zero(self):
        row = np.zeros((1, 32))
        row[0, 7] = 1.0
        assert emotion_loss(Tensor(row), 7).item() == 0.0

    def test_half_probability_gives_ln2(self):
        row = np.full((1, 32), 0.5 / 31)
        row[0, 3] = 0.5
        assert abs(emotion_loss(Tensor(row), 3).item() - math.log(2)) < 1e-12

    def test_zero_probability_is_clamped(self):
        row = np.zeros((1, 32))
        row[0, 0] = 1.0
        loss = emotion_loss(Tensor(row), 1)
        assert math.isfinite(loss.item())
        assert loss.item() == pytest.approx(-math.log(1e-12))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            emotion_loss(Tensor(np.full((1, 32), 1 / 32)), 32)


def test_full_graph_stage_gradient_check(toy_config, toy_vocab, toy_store, two_turn_sample):
    net = ResponderNetwork(toy_config, toy_vocab, store=toy_store, variant="full", seed=5)

    def forward():
        context = net._encode(two_turn_sample, train=False)
        states, emo_state = net._differentiate(two_turn_sample, context)
        p_emo = perceive_emotion(context, emo_state, net.emotion_classifier)
        pieces = [emotion_loss(p_emo, 3)]
        for s in states:
            pieces.append(T.tensor_sum(T.sigmoid(s)))
        total = pieces[0]
        for extra in pieces[1:]:
            total = T.add(total, extra)
        return total

    names = [n for n in net.params
             if n.startswith(("sod.", "knowledge.")) or n == "embedding.role"]
    T.zero_grads(net.params.values())
    with Tape() as tape:
        tape.backward(forward())
    for name in names:
        p = net.params[name]
        fd = finite_difference(lambda: forward().item(), p.data, FD_STEP)
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        err = relative_errors(analytic, fd).max()
        assert err < 1e-4, f"{name}: {err}"
