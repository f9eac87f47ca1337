"""Modulation stage: gate the differentiated states into the context.

First the emotional/cognitive state pair of each side is fused into a single
awareness vector by a sigmoid gate.  Each side's token slice is then refined
point-wise (awareness vector concatenated to every token state, pushed
through a slice-specific feed-forward map), the full context cross-attends
to each refined slice, and a final elementwise gate blends the two results
into the modulated context the decoder will read.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .encoder import (AttentionParams, ContextStates, FeedForwardParams,
                      LayerNormParams, multi_head_attention)


@dataclass
class GateParams:
    weight: Tensor
    bias: Tensor


@dataclass
class AwarenessPair:
    """Fused per-side awareness vectors, each of shape (1, width)."""

    self_state: Tensor
    other_state: Tensor
    self_gate: Tensor | None = None
    other_gate: Tensor | None = None


@dataclass
class ModulatedContext:
    context: Tensor                    # what the decoder cross-attends to
    self_branch: Tensor | None = None
    other_branch: Tensor | None = None
    gate: Tensor | None = None


def fuse_pair(emotional: Tensor, cognitive: Tensor, gate: GateParams) -> tuple[Tensor, Tensor]:
    """Convex blend of the two state vectors under a learned sigmoid gate."""
    g = T.sigmoid(T.add(T.matmul(T.concat([emotional, cognitive], axis=1), gate.weight),
                        gate.bias))
    one_minus = T.add_scalar(T.mul_scalar(g, -1.0), 1.0)
    fused = T.add(T.mul(g, emotional), T.mul(one_minus, cognitive))
    return fused, g


def fuse_states(self_emotional: Tensor, self_cognitive: Tensor,
                other_emotional: Tensor, other_cognitive: Tensor,
                self_gate: GateParams, other_gate: GateParams) -> AwarenessPair:
    s, gs = fuse_pair(self_emotional, self_cognitive, self_gate)
    o, go = fuse_pair(other_emotional, other_cognitive, other_gate)
    return AwarenessPair(self_state=s, other_state=o, self_gate=gs, other_gate=go)


def tile_rows(vector: Tensor, count: int) -> Tensor:
    """Repeat a (1, d) vector into (count, d); gradient sums back over rows."""
    ones = T.constant(np.ones((count, 1)), dtype=vector.dtype)
    return T.matmul(ones, vector)


def refine_slice(states: Tensor, indices: np.ndarray, awareness: Tensor,
                 ffn: FeedForwardParams) -> Tensor | None:
    """Point-wise refinement of one side's token slice.

    Every token state gets the awareness vector prepended (doubled width),
    then a two-layer feed-forward map brings it back to model width.
    Returns None for an empty slice.
    """
    if indices.size == 0:
        return None
    rows = T.take(states, indices)
    stacked = T.concat([tile_rows(awareness, indices.size), rows], axis=1)
    hidden = T.relu(T.add(T.matmul(stacked, ffn.w1), ffn.b1))
    return T.add(T.matmul(hidden, ffn.w2), ffn.b2)


def refine_context(context: ContextStates, pair: AwarenessPair,
                   self_ffn: FeedForwardParams,
                   other_ffn: FeedForwardParams) -> tuple[Tensor | None, Tensor | None]:
    refined_self = refine_slice(context.states, context.self_indices(),
                                pair.self_state, self_ffn)
    refined_other = refine_slice(context.states, context.other_indices(),
                                 pair.other_state, other_ffn)
    return refined_self, refined_other


def cross_attend(context: ContextStates, refined: Tensor, attn: AttentionParams,
                 ln: LayerNormParams, heads: int) -> Tensor:
    """Full context queries a refined slice; residual plus normalization."""
    mixed = multi_head_attention(attn, context.states, refined, heads, scaled=True)
    return T.layer_norm(T.add(context.states, mixed), ln.gain, ln.bias)


def gate_combine(self_branch: Tensor, other_branch: Tensor,
                 gate: GateParams) -> tuple[Tensor, Tensor]:
    g = T.sigmoid(T.add(T.matmul(T.concat([self_branch, other_branch], axis=1), gate.weight),
                        gate.bias))
    one_minus = T.add_scalar(T.mul_scalar(g, -1.0), 1.0)
    combined = T.add(T.mul(g, self_branch), T.mul(one_minus, other_branch))
    return combined, g


def modulate(context: ContextStates, refined_self: Tensor | None,
             refined_other: Tensor | None, self_attn: AttentionParams,
             self_ln: LayerNormParams, other_attn: AttentionParams,
             other_ln: LayerNormParams, gate: GateParams, heads: int,
             empty_slice_mode: str = "zero") -> ModulatedContext:
    """Blend the two cross-attended branches into the modulated context.

    A side whose refined slice is empty contributes an all-zero branch under
    the default ``empty_slice_mode="zero"``; with ``"other_only"`` the
    non-empty branch is passed through and the gate is skipped.
    """
    if refined_self is None and refined_other is None:
        raise ValueError("both context slices empty; dialogue violates the corpus contract")
    n = context.states.shape[0]
    dim = context.states.shape[1]
    dtype = context.states.dtype
    if empty_slice_mode not in ("zero", "other_only"):
        raise ValueError(f"unknown empty_slice_mode {empty_slice_mode!r}")
    if empty_slice_mode == "other_only" and (refined_self is None or refined_other is None):
        live = refined_self if refined_self is not None else refined_other
        attn, ln = ((self_attn, self_ln) if refined_self is not None
                    else (other_attn, other_ln))
        branch = cross_attend(context, live, attn, ln, heads)
        return ModulatedContext(context=branch,
                                self_branch=branch if refined_self is not None else None,
                                other_branch=branch if refined_other is not None else None)
    zero = T.constant(np.zeros((n, dim)), dtype=dtype)
    c_self = (cross_attend(context, refined_self, self_attn, self_ln, heads)
              if refined_self is not None else zero)
    c_other = (cross_attend(context, refined_other, other_attn, other_ln, heads)
               if refined_other is not None else zero)
    combined, g = gate_combine(c_self, c_other, gate)
    return ModulatedContext(context=combined, self_branch=c_self,
                            other_branch=c_other, gate=g)
