"""Generation stage: decoder with per-step awareness injection.

A standard pre-norm decoder stack cross-attends to the modulated context.
Before the vocabulary projection, every step's hidden state is fused with
the self and other awareness vectors through a sigmoid gate, so each emitted
token is grounded in both views.  Decoding is greedy by default with an
optional fixed-width beam.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .encoder import (AttentionParams, FeedForwardParams, LayerNormParams,
                      feed_forward, multi_head_attention, sinusoidal_positions)


@dataclass
class DecoderConfig:
    layers: int = 2
    heads: int = 6
    hidden_dim: int = 300
    ffn_dim: int = 600
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    ln_self: LayerNormParams
    cross_attn: AttentionParams
    ln_cross: LayerNormParams
    ffn: FeedForwardParams
    ln_ffn: LayerNormParams


@dataclass
class OutputParams:
    weight: Tensor      # (hidden, vocab)
    bias: Tensor        # (vocab,)


def _maybe_dropout(x: Tensor, rate: float, train: bool, rng) -> Tensor:
    if train and rate > 0.0:
        return T.dropout(x, rate, rng)
    return x


def decoder_states(prefix_ids: Sequence[int], embedding: Tensor,
                   layer_params: list[DecoderLayerParams], memory: Tensor,
                   memory_mask: np.ndarray | None, config: DecoderConfig,
                   causal: bool = True, train: bool = False, rng=None,
                   max_prefix: int | None = None) -> Tensor:
    """Hidden states for every prefix position, shape (len(prefix), width).

    ``max_prefix`` bounds incremental decoding; teacher-forced training
    passes None because reference responses may be arbitrarily long.
    ``causal=False`` exists only as a negative control for mask tests.
    """
    ids = np.asarray(prefix_ids, dtype=np.intp)
    if ids.size == 0:
        raise ValueError("decoder prefix must contain at least the start token")
    if max_prefix is not None and ids.size > max_prefix:
        raise ValueError(f"prefix of {ids.size} exceeds the decoding budget {max_prefix}")
    x = T.take(embedding, ids)
    pe = sinusoidal_positions(ids.size, config.hidden_dim, dtype=embedding.dtype)
    x = T.add(x, T.constant(pe, dtype=embedding.dtype))
    n = ids.size
    self_mask = np.tril(np.ones((n, n), dtype=bool)) if causal else None
    mem_mask = None if memory_mask is None or memory_mask.all() else memory_mask[None, :]
    for p in layer_params:
        normed = T.layer_norm(x, p.ln_self.gain, p.ln_self.bias)
        x = T.add(x, _maybe_dropout(
            multi_head_attention(p.self_attn, normed, normed, config.heads, mask=self_mask),
            config.dropout, train, rng))
        normed = T.layer_norm(x, p.ln_cross.gain, p.ln_cross.bias)
        x = T.add(x, _maybe_dropout(
            multi_head_attention(p.cross_attn, normed, memory, config.heads, mask=mem_mask),
            config.dropout, train, rng))
        normed = T.layer_norm(x, p.ln_ffn.gain, p.ln_ffn.bias)
        x = T.add(x, _maybe_dropout(feed_forward(p.ffn, normed), config.dropout, train, rng))
    return x


def inject_awareness(hidden: Tensor, self_state: Tensor, other_state: Tensor,
                     gate_weight: Tensor, gate_bias: Tensor) -> Tensor:
    """Add a gated blend of the two awareness vectors to every step state."""
    n = hidden.shape[0]
    ones = T.constant(np.ones((n, 1)), dtype=hidden.dtype)
    tiled_self = T.matmul(ones, self_state)
    tiled_other = T.matmul(ones, other_state)
    g = T.sigmoid(T.add(
        T.matmul(T.concat([hidden, tiled_self, tiled_other], axis=1), gate_weight),
        gate_bias))
    one_minus = T.add_scalar(T.mul_scalar(g, -1.0), 1.0)
    return T.add(hidden, T.add(T.mul(g, tiled_self), T.mul(one_minus, tiled_other)))


def inject_single(hidden: Tensor, state: Tensor) -> Tensor:
    """Single-awareness injection used by the one-sided and merged variants."""
    n = hidden.shape[0]
    ones = T.constant(np.ones((n, 1)), dtype=hidden.dtype)
    return T.add(hidden, T.matmul(ones, state))


def step_distributions(hidden: Tensor, out: OutputParams) -> Tensor:
    """Vocabulary distribution for every step, shape (steps, vocab)."""
    return T.softmax(T.add(T.matmul(hidden, out.weight), out.bias), axis=-1)


def token_nlls(distributions: Tensor, target_ids: Sequence[int]) -> Tensor:
    """Per-position negative log-likelihoods, shape (len(targets), 1)."""
    targets = np.asarray(target_ids, dtype=np.intp)
    if targets.size != distributions.shape[0]:
        raise ValueError(
            f"{targets.size} targets for {distributions.shape[0]} distributions")
    picked = T.gather_pairs(distributions, np.arange(targets.size), targets)
    return T.mul_scalar(T.log(picked), -1.0)


def generation_loss(distributions: Tensor, target_ids: Sequence[int]) -> Tensor:
    """Mean teacher-forced negative log-likelihood over the target positions."""
    targets = np.asarray(target_ids, dtype=np.intp)
    if targets.size == 0:
        raise ValueError("empty target sequence")
    return T.mul_scalar(T.tensor_sum(token_nlls(distributions, targets)), 1.0 / targets.size)


StepFn = Callable[[list[int]], np.ndarray]
"""Maps a BOS-seeded prefix to the next-token probability row."""


def greedy_decode(step_fn: StepFn, bos_id: int, eos_id: int, max_steps: int = 30) -> list[int]:
    """Argmax decoding; stops on the end token or after ``max_steps`` tokens."""
    prefix = [bos_id]
    out: list[int] = []
    for _ in range(max_steps):
        probs = step_fn(prefix)
        nxt = int(np.argmax(probs))
        if nxt == eos_id:
            break
        out.append(nxt)
        prefix.append(nxt)
    return out


def beam_decode(step_fn: StepFn, bos_id: int, eos_id: int, max_steps: int = 30,
                beam_width: int = 4) -> list[int]:
    """Fixed-width beam search over summed log-probabilities."""
    beams: list[tuple[float, list[int], bool]] = [(0.0, [bos_id], False)]
    for _ in range(max_steps):
        candidates: list[tuple[float, list[int], bool]] = []
        for score, prefix, done in beams:
            if done:
                candidates.append((score, prefix, True))
                continue
            probs = step_fn(prefix)
            top = np.argsort(probs)[::-1][:beam_width]
            for tok in top:
                tok = int(tok)
                lp = float(np.log(max(probs[tok], 1e-300)))
                candidates.append((score + lp, prefix + [tok], tok == eos_id))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = candidates[:beam_width]
        if all(done for _, _, done in beams):
            break
    best = max(beams, key=lambda c: c[0])
    tokens = best[1][1:]
    if tokens and tokens[-1] == eos_id:
        tokens = tokens[:-1]
    return tokens[:max_steps]


def causal_mask_check(logits_fn: Callable[[list[int]], np.ndarray],
                      prefix_ids: Sequence[int], position: int,
                      replacement_id: int) -> bool:
    """True iff perturbing tokens after ``position`` leaves logits at
    positions <= ``position`` unchanged."""
    base = logits_fn(list(prefix_ids))
    perturbed_ids = list(prefix_ids)
    changed = False
    for i in range(position + 1, len(perturbed_ids)):
        if perturbed_ids[i] != replacement_id:
            perturbed_ids[i] = replacement_id
            changed = True
    if not changed:
        raise ValueError("no position after the probe to perturb")
    perturbed = logits_fn(perturbed_ids)
    return bool(np.allclose(base[: position + 1], perturbed[: position + 1],
                            rtol=0.0, atol=1e-9))
