"""Full response network: parameter construction and variant wiring.

The forward pass strings the stages together for one dialogue: encode the
flattened context, build the awareness graph(s) and differentiate the state
vectors, perceive the other's emotion, modulate the context, decode the
target prefix, and inject the awareness vectors before the vocabulary
softmax.  Ablation variants rewire or drop individual stages; each variant
only ever allocates the parameters it can reach, so checkpoints stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .corpus import DialogueSample, Vocabulary, assemble_encoder_input, default_emotion_labels
from .encoder import (AttentionParams, ContextStates, EncoderConfig, EncoderLayerParams,
                      FeedForwardParams, LayerNormParams, encode)
from .differentiation import (GraphAttentionLayerParams, build_graphs,
                              build_merged_graph, differentiate, emotion_loss,
                              perceive_emotion, run_layers)
from .generation import (DecoderConfig, DecoderLayerParams, OutputParams, beam_decode,
                         decoder_states, generation_loss, greedy_decode, inject_awareness,
                         inject_single, step_distributions)
from .knowledge import KnowledgeStore
from .modulation import (AwarenessPair, GateParams, ModulatedContext, cross_attend,
                         fuse_pair, fuse_states, modulate, refine_slice)

VARIANTS = ("full", "no_sog", "no_som", "no_sod", "emp_na", "emp_oa", "emp_sa")


@dataclass(frozen=True)
class VariantWiring:
    graphs: str          # "both" | "merged" | "none"
    awareness: str       # "both" | "self" | "other" | "joint" | "none"
    modulation: bool
    injection: str       # "gated" | "single" | "off"


_WIRING = {
    "full": VariantWiring("both", "both", True, "gated"),
    "no_sog": VariantWiring("both", "both", True, "off"),
    "no_som": VariantWiring("both", "none", False, "off"),
    "no_sod": VariantWiring("none", "none", False, "off"),
    "emp_na": VariantWiring("merged", "joint", True, "single"),
    "emp_oa": VariantWiring("both", "other", True, "single"),
    "emp_sa": VariantWiring("both", "self", True, "single"),
}


def wiring_for(variant: str) -> VariantWiring:
    try:
        return _WIRING[variant]
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}") from None


@dataclass
class ModelConfig:
    hidden_dim: int = 300
    heads: int = 6
    encoder_layers: int = 2
    decoder_layers: int = 2
    graph_layers: int = 2
    ffn_dim: int = 600
    dropout: float = 0.1
    knowledge_dim: int = 1024
    max_len: int = 128
    n_emotions: int = 32
    empty_slice_mode: str = "zero"
    precision: str = "float64"

    @property
    def dtype(self):
        if self.precision == "float64":
            return np.float64
        if self.precision == "float32":
            return np.float32
        raise ValueError(f"unknown precision {self.precision!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(layers=self.encoder_layers, heads=self.heads,
                             hidden_dim=self.hidden_dim, ffn_dim=self.ffn_dim,
                             dropout=self.dropout)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(layers=self.decoder_layers, heads=self.heads,
                             hidden_dim=self.hidden_dim, ffn_dim=self.ffn_dim,
                             dropout=self.dropout)


@dataclass
class ForwardPass:
    context: ContextStates
    distributions: Tensor
    p_emo: Tensor
    target_ids: list[int]
    states: tuple[Tensor, Tensor, Tensor, Tensor] | None = None
    pair: AwarenessPair | None = None
    modulated: ModulatedContext | None = None
    hidden: Tensor | None = None
    fused: Tensor | None = None


class ResponderNetwork:
    """Parameters plus the variant-aware forward pass."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary,
                 labels: list[str] | None = None, store: KnowledgeStore | None = None,
                 variant: str = "full", seed: int = 0,
                 embedding_matrix: np.ndarray | None = None):
        self.config = config
        self.vocab = vocab
        self.labels = labels if labels is not None else default_emotion_labels()
        if len(self.labels) != config.n_emotions:
            raise ValueError(
                f"{len(self.labels)} emotion labels for {config.n_emotions} classes")
        self.variant = variant
        self.wiring = wiring_for(variant)
        self.store = store
        if self.wiring.graphs != "none":
            if store is None:
                raise ValueError(f"variant {variant!r} needs a knowledge store")
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.default_rng(seed)          # parameter init
        self._dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self._build_parameters(embedding_matrix)
        if self.store is not None and self.wiring.graphs != "none":
            self.store.attach_projection(self.params["knowledge.projection.weight"],
                                         self.params["knowledge.projection.bias"])

    # ------------------------------------------------------------------
    # parameter construction (deterministic order)
    # ------------------------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        t = T.parameter(data.astype(self.config.dtype, copy=False), name=name)
        self.params[name] = t
        return t

    def _weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        return self._add(name, T.glorot(self._rng, fan_in, fan_out))

    def _bias(self, name: str, n: int) -> Tensor:
        return self._add(name, np.zeros((1, n)))

    def _ln(self, prefix: str) -> LayerNormParams:
        d = self.config.hidden_dim
        return LayerNormParams(gain=self._add(f"{prefix}.gain", np.ones((1, d))),
                               bias=self._add(f"{prefix}.bias", np.zeros((1, d))))

    def _attention(self, prefix: str) -> AttentionParams:
        d = self.config.hidden_dim
        return AttentionParams(
            wq=self._weight(f"{prefix}.wq", d, d), bq=self._bias(f"{prefix}.bq", d),
            wk=self._weight(f"{prefix}.wk", d, d), bk=self._bias(f"{prefix}.bk", d),
            wv=self._weight(f"{prefix}.wv", d, d), bv=self._bias(f"{prefix}.bv", d),
            wo=self._weight(f"{prefix}.wo", d, d), bo=self._bias(f"{prefix}.bo", d))

    def _ffn(self, prefix: str, d_in: int, d_mid: int, d_out: int) -> FeedForwardParams:
        return FeedForwardParams(
            w1=self._weight(f"{prefix}.w1", d_in, d_mid), b1=self._bias(f"{prefix}.b1", d_mid),
            w2=self._weight(f"{prefix}.w2", d_mid, d_out), b2=self._bias(f"{prefix}.b2", d_out))

    def _gate(self, prefix: str, d_in: int, d_out: int) -> GateParams:
        return GateParams(weight=self._weight(f"{prefix}.weight", d_in, d_out),
                          bias=self._bias(f"{prefix}.bias", d_out))

    def _build_parameters(self, embedding_matrix: np.ndarray | None) -> None:
        cfg = self.config
        d = cfg.hidden_dim
        w = self.wiring
        if embedding_matrix is not None:
            if embedding_matrix.shape != (len(self.vocab), d):
                raise ValueError(
                    f"embedding matrix {embedding_matrix.shape} does not match "
                    f"({len(self.vocab)}, {d})")
            self._add("embedding.word", np.array(embedding_matrix))
        else:
            self._add("embedding.word", T.small_normal(self._rng, (len(self.vocab), d)))
        self._add("embedding.role", T.small_normal(self._rng, (2, d)))

        self.encoder_layers = []
        for i in range(cfg.encoder_layers):
            prefix = f"encoder.layers.{i}"
            self.encoder_layers.append(EncoderLayerParams(
                attn=self._attention(f"{prefix}.attn"),
                ln_attn=self._ln(f"{prefix}.ln_attn"),
                ffn=self._ffn(f"{prefix}.ffn", d, cfg.ffn_dim, d),
                ln_ffn=self._ln(f"{prefix}.ln_ffn")))

        if w.graphs != "none":
            self._weight("knowledge.projection.weight", cfg.knowledge_dim, d)
            self._bias("knowledge.projection.bias", d)
            if w.graphs == "both":
                self.state_params = {
                    "self": (self._add("sod.state.self_emotional", T.small_normal(self._rng, (1, d))),
                             self._add("sod.state.self_cognitive", T.small_normal(self._rng, (1, d)))),
                    "other": (self._add("sod.state.other_emotional", T.small_normal(self._rng, (1, d))),
                              self._add("sod.state.other_cognitive", T.small_normal(self._rng, (1, d)))),
                }
            else:
                self.state_params = {
                    "joint": (self._add("sod.state.joint_emotional", T.small_normal(self._rng, (1, d))),
                              self._add("sod.state.joint_cognitive", T.small_normal(self._rng, (1, d)))),
                }
            self.graph_layers = []
            for i in range(cfg.graph_layers):
                prefix = f"sod.layers.{i}"
                self.graph_layers.append(GraphAttentionLayerParams(
                    wq=self._weight(f"{prefix}.wq", d, d),
                    wk=self._weight(f"{prefix}.wk", d, d),
                    wv=self._weight(f"{prefix}.wv", d, d),
                    ln=self._ln(f"{prefix}.ln")))
        self.emotion_classifier = self._weight("sod.emotion.weight", d, cfg.n_emotions)

        if w.awareness in ("both", "self", "joint"):
            name = "joint" if w.awareness == "joint" else "self"
            self.fuse_self = self._gate(f"som.fuse.{name}", 2 * d, d)
        if w.awareness in ("both", "other"):
            self.fuse_other = self._gate("som.fuse.other", 2 * d, d)

        if w.modulation:
            if w.awareness in ("both", "self", "joint"):
                self.refine_self_ffn = self._ffn("som.refine.self", 2 * d, d, d)
                self.cross_self = self._attention("som.cross.self.attn")
                self.cross_self_ln = self._ln("som.cross.self.ln")
            if w.awareness in ("both", "other", "joint"):
                self.refine_other_ffn = self._ffn("som.refine.other", 2 * d, d, d)
                self.cross_other = self._attention("som.cross.other.attn")
                self.cross_other_ln = self._ln("som.cross.other.ln")
            if w.awareness in ("both", "joint"):
                self.modulate_gate = self._gate("som.gate", 2 * d, d)

        self.decoder_layers = []
        for i in range(cfg.decoder_layers):
            prefix = f"decoder.layers.{i}"
            self.decoder_layers.append(DecoderLayerParams(
                self_attn=self._attention(f"{prefix}.self_attn"),
                ln_self=self._ln(f"{prefix}.ln_self"),
                cross_attn=self._attention(f"{prefix}.cross_attn"),
                ln_cross=self._ln(f"{prefix}.ln_cross"),
                ffn=self._ffn(f"{prefix}.ffn", d, cfg.ffn_dim, d),
                ln_ffn=self._ln(f"{prefix}.ln_ffn")))

        if w.injection == "gated":
            self.inject_gate = self._gate("sog.inject", 3 * d, d)
        # small output init keeps the initial vocabulary distribution near uniform
        self.output = OutputParams(
            weight=self._add("output.weight", T.small_normal(self._rng, (d, len(self.vocab)))),
            bias=self._add("output.bias", np.zeros(len(self.vocab))))

    # ------------------------------------------------------------------
    # forward passes
    # ------------------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def label_index(self, emotion: str) -> int:
        try:
            return self.labels.index(emotion)
        except ValueError:
            raise ValueError(f"emotion {emotion!r} not among the configured labels") from None

    def _encode(self, sample: DialogueSample, train: bool) -> ContextStates:
        inp = assemble_encoder_input(sample, self.vocab, self.config.max_len)
        return encode(inp, self.params["embedding.word"], self.params["embedding.role"],
                      self.encoder_layers, self.config.encoder_config(),
                      train=train, rng=self._dropout_rng)

    def _differentiate(self, sample: DialogueSample, context: ContextStates):
        """Graph stage; returns (four state vectors or None, emotion-state vector)."""
        w = self.wiring
        if w.graphs == "none":
            return None, None
        if w.graphs == "merged":
            graph = build_merged_graph(sample, context, self.store,
                                       *self.state_params["joint"])
            graph = run_layers(graph, self.graph_layers, self.config.heads)
            j_e, j_c = graph.state_vectors()
            return (j_e, j_c, j_e, j_c), j_e
        g_self, g_other = build_graphs(sample, context, self.store,
                                       self.state_params["self"], self.state_params["other"])
        s_e, s_c, o_e, o_c = differentiate(g_self, g_other, self.graph_layers,
                                           self.config.heads)
        return (s_e, s_c, o_e, o_c), o_e

    def _awareness(self, states) -> tuple[Tensor | None, Tensor | None, AwarenessPair | None]:
        w = self.wiring
        if w.awareness == "none" or states is None:
            return None, None, None
        s_e, s_c, o_e, o_c = states
        if w.awareness == "both":
            pair = fuse_states(s_e, s_c, o_e, o_c, self.fuse_self, self.fuse_other)
            return pair.self_state, pair.other_state, pair
        if w.awareness == "joint":
            joint, g = fuse_pair(s_e, s_c, self.fuse_self)
            pair = AwarenessPair(self_state=joint, other_state=joint, self_gate=g)
            return joint, joint, pair
        if w.awareness == "other":
            other, g = fuse_pair(o_e, o_c, self.fuse_other)
            return None, other, AwarenessPair(self_state=None, other_state=other, other_gate=g)
        self_state, g = fuse_pair(s_e, s_c, self.fuse_self)
        return self_state, None, AwarenessPair(self_state=self_state, other_state=None,
                                               self_gate=g)

    def _modulate(self, context: ContextStates, aw_self: Tensor | None,
                  aw_other: Tensor | None) -> tuple[Tensor, ModulatedContext | None]:
        w = self.wiring
        if not w.modulation:
            return context.states, None
        heads = self.config.heads
        refined_self = (refine_slice(context.states, context.self_indices(), aw_self,
                                     self.refine_self_ffn) if aw_self is not None else None)
        refined_other = (refine_slice(context.states, context.other_indices(), aw_other,
                                      self.refine_other_ffn) if aw_other is not None else None)
        if w.awareness in ("both", "joint"):
            mod = modulate(context, refined_self, refined_other,
                           self.cross_self, self.cross_self_ln,
                           self.cross_other, self.cross_other_ln,
                           self.modulate_gate, heads,
                           empty_slice_mode=self.config.empty_slice_mode)
            return mod.context, mod
        # single-awareness variants: the lone branch is the modulated context
        if w.awareness == "other":
            refined, attn, ln = refined_other, self.cross_other, self.cross_other_ln
        else:
            refined, attn, ln = refined_self, self.cross_self, self.cross_self_ln
        if refined is None:
            n, d = context.states.shape
            zero = T.constant(np.zeros((n, d)), dtype=context.states.dtype)
            return zero, None
        branch = cross_attend(context, refined, attn, ln, heads)
        return branch, ModulatedContext(context=branch)

    def _decode(self, prefix_ids, memory: Tensor, memory_mask, aw_self, aw_other,
                train: bool, max_prefix: int | None = None) -> tuple[Tensor, Tensor]:
        hidden = decoder_states(prefix_ids, self.params["embedding.word"],
                                self.decoder_layers, memory, memory_mask,
                                self.config.decoder_config(), train=train,
                                rng=self._dropout_rng, max_prefix=max_prefix)
        w = self.wiring
        if w.injection == "gated":
            fused = inject_awareness(hidden, aw_self, aw_other,
                                     self.inject_gate.weight, self.inject_gate.bias)
        elif w.injection == "single":
            state = aw_other if aw_other is not None else aw_self
            fused = inject_single(hidden, state)
        else:
            fused = hidden
        return hidden, fused

    def forward(self, sample: DialogueSample, train: bool = False) -> ForwardPass:
        """Teacher-forced pass over one dialogue."""
        context = self._encode(sample, train)
        states, emo_state = self._differentiate(sample, context)
        p_emo = perceive_emotion(context, emo_state, self.emotion_classifier)
        aw_self, aw_other, pair = self._awareness(states)
        memory, modulated = self._modulate(context, aw_self, aw_other)
        response_ids = self.vocab.encode(sample.response)
        prefix = [self.vocab.bos_id] + response_ids
        targets = response_ids + [self.vocab.eos_id]
        hidden, fused = self._decode(prefix, memory, context.input.pad_mask,
                                     aw_self, aw_other, train)
        dists = step_distributions(fused, self.output)
        return ForwardPass(context=context, distributions=dists, p_emo=p_emo,
                           target_ids=targets, states=states, pair=pair,
                           modulated=modulated, hidden=hidden, fused=fused)

    def losses(self, sample: DialogueSample, train: bool = False,
               forward: ForwardPass | None = None) -> tuple[Tensor, Tensor, ForwardPass]:
        fp = forward if forward is not None else self.forward(sample, train=train)
        l_emo = emotion_loss(fp.p_emo, self.label_index(sample.emotion))
        l_gen = generation_loss(fp.distributions, fp.target_ids)
        return l_emo, l_gen, fp

    # ------------------------------------------------------------------
    # inference
    # ------------------------------------------------------------------

    def _memory_for(self, sample: DialogueSample):
        context = self._encode(sample, train=False)
        states, emo_state = self._differentiate(sample, context)
        p_emo = perceive_emotion(context, emo_state, self.emotion_classifier)
        aw_self, aw_other, _ = self._awareness(states)
        memory, _ = self._modulate(context, aw_self, aw_other)
        return context, memory, aw_self, aw_other, p_emo

    def predict_emotion_index(self, sample: DialogueSample) -> int:
        context = self._encode(sample, train=False)
        _, emo_state = self._differentiate(sample, context)
        p_emo = perceive_emotion(context, emo_state, self.emotion_classifier)
        return int(np.argmax(p_emo.data))

    def generate(self, sample: DialogueSample, strategy: str = "greedy",
                 max_steps: int = 30, beam_width: int = 4) -> list[str]:
        """Decode a response; stops at the end token or ``max_steps`` tokens."""
        context, memory, aw_self, aw_other, _ = self._memory_for(sample)

        def step_fn(prefix: list[int]) -> np.ndarray:
            _, fused = self._decode(prefix, memory, context.input.pad_mask,
                                    aw_self, aw_other, train=False,
                                    max_prefix=max_steps + 1)
            dists = step_distributions(fused, self.output)
            return dists.data[-1]

        if strategy == "greedy":
            ids = greedy_decode(step_fn, self.vocab.bos_id, self.vocab.eos_id, max_steps)
        elif strategy == "beam":
            ids = beam_decode(step_fn, self.vocab.bos_id, self.vocab.eos_id, max_steps,
                              beam_width)
        else:
            raise ValueError(f"unknown decoding strategy {strategy!r}")
        return self.vocab.decode(ids)
