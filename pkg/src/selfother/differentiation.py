"""Differentiation stage: one awareness graph per conversational side.

Each graph holds utterance nodes (initialized from the marker-token states
of that side), one emotional and one cognitive knowledge node per utterance,
and two learned state nodes.  Multi-head graph attention over the fixed
edge structure lets the state nodes aggregate their side's information while
the two graphs never exchange anything, so self and other stay disentangled
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .corpus import DialogueSample, SELF, OTHER, ROLE_IDS
from .encoder import ContextStates, LayerNormParams
from .knowledge import KnowledgeStore, node_init_vectors


@dataclass
class GraphAttentionLayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    ln: LayerNormParams


@dataclass
class AwarenessGraph:
    """Typed nodes plus a symmetric adjacency for one side.

    Node order: utterances 0..k-1, emotional knowledge k..2k-1, cognitive
    knowledge 2k..3k-1, then the emotional and cognitive state nodes.
    """

    side: str
    nodes: Tensor
    adjacency: np.ndarray
    utterance_count: int

    @property
    def node_count(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def edge_count(self) -> int:
        return int(np.triu(self.adjacency, k=1).sum())

    @property
    def emotional_state_index(self) -> int:
        return 3 * self.utterance_count

    @property
    def cognitive_state_index(self) -> int:
        return 3 * self.utterance_count + 1

    def state_vectors(self) -> tuple[Tensor, Tensor]:
        e = T.take(self.nodes, [self.emotional_state_index])
        c = T.take(self.nodes, [self.cognitive_state_index])
        return e, c


def _adjacency(k: int) -> np.ndarray:
    n = 3 * k + 2
    adj = np.zeros((n, n), dtype=bool)

    def connect(i, j):
        adj[i, j] = adj[j, i] = True

    e_state, c_state = 3 * k, 3 * k + 1
    for i in range(k - 1):
        connect(i, i + 1)                       # adjacent utterances
    for i in range(k):
        connect(i, k + i)                       # utterance to its emotional knowledge
        connect(i, 2 * k + i)                   # utterance to its cognitive knowledge
        connect(e_state, i)
        connect(e_state, k + i)
        connect(c_state, i)
        connect(c_state, 2 * k + i)
    return adj


def build_graph(side: str, sample: DialogueSample, context: ContextStates,
                store: KnowledgeStore, state_emotional: Tensor,
                state_cognitive: Tensor,
                utterance_indices: list[int] | None = None) -> AwarenessGraph:
    """Assemble one side's graph from marker states and knowledge vectors.

    ``utterance_indices`` overrides which utterances join the graph (used by
    the merged no-differentiation variant); by default the side's own turns
    are taken, matching the roles recorded in the encoder input.
    """
    marker_roles = context.input.marker_roles
    if utterance_indices is None:
        utterance_indices = [i for i, r in enumerate(marker_roles) if r == ROLE_IDS[side]]
    k = len(utterance_indices)
    offset = context.input.utterance_offset
    rows: list[Tensor] = []
    if k:
        rows.append(T.take(context.states, context.input.marker_indices[utterance_indices]))
        emo, cog = [], []
        for i in utterance_indices:
            e, c = node_init_vectors(store, sample.id, offset + i)
            emo.append(e)
            cog.append(c)
        rows.extend(emo)
        rows.extend(cog)
    rows.append(state_emotional)
    rows.append(state_cognitive)
    return AwarenessGraph(
        side=side,
        nodes=T.concat(rows, axis=0),
        adjacency=_adjacency(k),
        utterance_count=k,
    )


def build_graphs(sample: DialogueSample, context: ContextStates, store: KnowledgeStore,
                 self_states: tuple[Tensor, Tensor],
                 other_states: tuple[Tensor, Tensor]) -> tuple[AwarenessGraph, AwarenessGraph]:
    g_self = build_graph(SELF, sample, context, store, *self_states)
    g_other = build_graph(OTHER, sample, context, store, *other_states)
    return g_self, g_other


def build_merged_graph(sample: DialogueSample, context: ContextStates, store: KnowledgeStore,
                       state_emotional: Tensor, state_cognitive: Tensor) -> AwarenessGraph:
    """Single joint graph over all utterances, erasing the side distinction."""
    all_indices = list(range(len(context.input.marker_roles)))
    return build_graph("joint", sample, context, store, state_emotional, state_cognitive,
                       utterance_indices=all_indices)


def graph_attention_layer(graph: AwarenessGraph, p: GraphAttentionLayerParams,
                          heads: int, weights_out: list | None = None) -> AwarenessGraph:
    """One round of multi-head neighbor attention with residual and norm.

    Attention scores are plain dot products (no width scaling) masked to the
    adjacency; per-head weighted sums are concatenated.  Nodes without any
    neighbor pass through completely unchanged.
    """
    nodes = graph.nodes
    n, dim = nodes.shape
    width = dim // heads
    q = T.matmul(nodes, p.wq)
    k = T.matmul(nodes, p.wk)
    v = T.matmul(nodes, p.wv)
    outs = []
    for h in range(heads):
        cols = np.arange(h * width, (h + 1) * width)
        qh, kh, vh = (T.take(m, cols, axis=1) for m in (q, k, v))
        scores = T.matmul(qh, T.transpose(kh))
        alpha = T.softmax(scores, axis=-1, mask=graph.adjacency)
        if weights_out is not None:
            weights_out.append(alpha.data.copy())
        outs.append(T.matmul(alpha, vh))
    updated = T.layer_norm(T.add(nodes, T.concat(outs, axis=1)), p.ln.gain, p.ln.bias)
    isolated = ~graph.adjacency.any(axis=1)
    if isolated.any():
        keep = isolated.astype(nodes.dtype)
        updated = T.add(T.mul_rows(nodes, keep), T.mul_rows(updated, 1.0 - keep))
    return AwarenessGraph(graph.side, updated, graph.adjacency, graph.utterance_count)


def differentiate(g_self: AwarenessGraph, g_other: AwarenessGraph,
                  layers: list[GraphAttentionLayerParams],
                  heads: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Run the stacked layers on each graph independently; return the four
    state vectors (self emotional, self cognitive, other emotional, other
    cognitive), each of shape (1, width)."""
    for p in layers:
        g_self = graph_attention_layer(g_self, p, heads)
        g_other = graph_attention_layer(g_other, p, heads)
    s_e, s_c = g_self.state_vectors()
    o_e, o_c = g_other.state_vectors()
    return s_e, s_c, o_e, o_c


def run_layers(graph: AwarenessGraph, layers: list[GraphAttentionLayerParams],
               heads: int) -> AwarenessGraph:
    for p in layers:
        graph = graph_attention_layer(graph, p, heads)
    return graph


def perceive_emotion(context: ContextStates, other_emotional: Tensor | None,
                     classifier: Tensor) -> Tensor:
    """Emotion distribution from the other's marker states.

    The pooled representation is the mean of the other-side marker states,
    plus the other emotional state vector when the graphs are enabled.
    Returns a (1, n_classes) distribution.
    """
    oth_idx = context.input.other_marker_indices()
    if oth_idx.size == 0:
        raise ValueError("no other-side markers; the dialogue violates the corpus contract")
    pooled = T.mean_rows(T.take(context.states, oth_idx))
    if other_emotional is not None:
        pooled = T.add(pooled, other_emotional)
    return T.softmax(T.matmul(pooled, classifier), axis=-1)


def emotion_loss(p_emo: Tensor, label_index: int) -> Tensor:
    """Cross entropy against the gold label, clamped away from log(0)."""
    n = p_emo.shape[-1]
    if not 0 <= label_index < n:
        raise ValueError(f"label index {label_index} outside [0, {n})")
    picked = T.gather_pairs(p_emo, [0], [label_index])
    return T.mul_scalar(T.tensor_sum(T.log(picked)), -1.0)
