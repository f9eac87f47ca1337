"""Context encoder over role-tagged dialogue streams.

The encoder input is the sum of word, role, and (fixed sinusoidal) position
embeddings; a stack of pre-norm self-attention blocks turns it into
per-token states.  The multi-head attention helper here is shared by the
decoder and the cross-attention modulation stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .corpus import EncoderInput


@dataclass
class EncoderConfig:
    layers: int = 2
    heads: int = 6
    hidden_dim: int = 300
    ffn_dim: int = 600
    dropout: float = 0.1
    use_positions: bool = True

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ln_attn: LayerNormParams
    ffn: FeedForwardParams
    ln_ffn: LayerNormParams


@dataclass
class ContextStates:
    """Per-token encoder states plus the metadata to slice them."""

    states: Tensor
    input: EncoderInput

    @property
    def marker_indices(self) -> np.ndarray:
        return self.input.marker_indices

    def self_indices(self) -> np.ndarray:
        return np.nonzero(self.input.self_mask)[0]

    def other_indices(self) -> np.ndarray:
        return np.nonzero(self.input.other_mask)[0]


def sinusoidal_positions(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed position encodings: interleaved sines and cosines."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    half = (dim + 1) // 2
    freq = np.exp(-np.log(10000.0) * (2.0 * np.arange(half) / dim))
    angles = pos * freq[None, :]
    out = np.zeros((length, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)[:, : dim // 2]
    return out.astype(dtype)


def split_heads(x: Tensor, heads: int) -> list[Tensor]:
    dim = x.shape[1]
    width = dim // heads
    return [T.take(x, np.arange(h * width, (h + 1) * width), axis=1) for h in range(heads)]


def multi_head_attention(p: AttentionParams, query: Tensor, memory: Tensor, heads: int,
                         mask: np.ndarray | None = None, scaled: bool = True,
                         weights_out: list | None = None) -> Tensor:
    """Multi-head attention of ``query`` rows over ``memory`` rows.

    ``mask`` is boolean, broadcastable to (len(query), len(memory)); False
    entries receive zero attention.  ``scaled`` divides scores by the square
    root of the per-head width.  ``weights_out``, when given, collects one
    per-head attention matrix for inspection.
    """
    q = T.add(T.matmul(query, p.wq), p.bq)
    k = T.add(T.matmul(memory, p.wk), p.bk)
    v = T.add(T.matmul(memory, p.wv), p.bv)
    width = q.shape[1] // heads
    outs = []
    for qh, kh, vh in zip(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)):
        scores = T.matmul(qh, T.transpose(kh))
        if scaled:
            scores = T.mul_scalar(scores, 1.0 / np.sqrt(width))
        attn = T.softmax(scores, axis=-1, mask=mask)
        if weights_out is not None:
            weights_out.append(attn.data.copy())
        outs.append(T.matmul(attn, vh))
    merged = T.concat(outs, axis=1)
    return T.add(T.matmul(merged, p.wo), p.bo)


def feed_forward(p: FeedForwardParams, x: Tensor) -> Tensor:
    hidden = T.relu(T.add(T.matmul(x, p.w1), p.b1))
    return T.add(T.matmul(hidden, p.w2), p.b2)


def _maybe_dropout(x: Tensor, rate: float, train: bool, rng) -> Tensor:
    if train and rate > 0.0:
        return T.dropout(x, rate, rng)
    return x


def encoder_layer(p: EncoderLayerParams, x: Tensor, heads: int,
                  key_mask: np.ndarray | None, dropout: float = 0.0,
                  train: bool = False, rng=None) -> Tensor:
    mask = None if key_mask is None else key_mask[None, :]
    normed = T.layer_norm(x, p.ln_attn.gain, p.ln_attn.bias)
    x = T.add(x, _maybe_dropout(
        multi_head_attention(p.attn, normed, normed, heads, mask=mask), dropout, train, rng))
    normed = T.layer_norm(x, p.ln_ffn.gain, p.ln_ffn.bias)
    return T.add(x, _maybe_dropout(feed_forward(p.ffn, normed), dropout, train, rng))


def encode(inp: EncoderInput, embedding: Tensor, role_table: Tensor,
           layer_params: list[EncoderLayerParams], config: EncoderConfig,
           train: bool = False, rng=None) -> ContextStates:
    """Run the full encoder over an assembled input."""
    if inp.token_ids.size and inp.token_ids.max() >= embedding.shape[0]:
        raise IndexError(
            f"token id {int(inp.token_ids.max())} out of range for "
            f"vocabulary of {embedding.shape[0]}")
    x = T.add(T.take(embedding, inp.token_ids), T.take(role_table, inp.role_ids))
    if config.use_positions:
        pe = sinusoidal_positions(len(inp), config.hidden_dim, dtype=embedding.dtype)
        x = T.add(x, T.constant(pe[inp.positions], dtype=embedding.dtype))
    key_mask = None if inp.pad_mask.all() else inp.pad_mask
    for p in layer_params:
        x = encoder_layer(p, x, config.heads, key_mask, config.dropout, train, rng)
    return ContextStates(states=x, input=inp)
