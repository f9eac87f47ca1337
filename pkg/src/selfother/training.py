"""Multi-task optimization, schedule, and automatic evaluation metrics.

The total objective is a weighted sum of the emotion perception loss, the
teacher-forced generation loss, and a pluggable diversity term.  Adam with
the warmup-then-inverse-sqrt learning-rate schedule drives the updates;
early stopping watches the total validation loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor
from .corpus import DialogueSample
from .generation import token_nlls
from .network import ModelConfig, ResponderNetwork, VARIANTS


class TrainingDiverged(RuntimeError):
    """A loss term became non-finite during optimization."""

    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite value in {term} at step {step}")
        self.term = term
        self.step = step


@dataclass
class HyperParams:
    gamma_emotion: float = 1.0
    gamma_generation: float = 1.0
    gamma_diversity: float = 1.5
    learning_rate: float = 1e-4
    warmup_steps: int = 4000
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    epochs: int = 20
    patience: int = 5
    max_steps: int | None = None
    diversity: str = "off"            # "off" | "inverse_frequency"
    seed: int = 0

    def __post_init__(self):
        if min(self.gamma_emotion, self.gamma_generation, self.gamma_diversity) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


@dataclass
class MetricReport:
    ppl: float
    emotion_accuracy: float
    dist1: float
    dist2: float
    target_token_count: int
    generated_token_count: int
    sample_count: int

    def validate(self) -> None:
        assert self.ppl >= 1.0, f"perplexity below 1: {self.ppl}"
        assert 0.0 <= self.emotion_accuracy <= 1.0
        assert 0.0 <= self.dist1 <= 1.0 and 0.0 <= self.dist2 <= 1.0

    def to_dict(self) -> dict:
        return {
            "ppl": self.ppl,
            "emotion_accuracy": self.emotion_accuracy,
            "dist1": self.dist1,
            "dist2": self.dist2,
            "dist1_x100": self.dist1 * 100.0,
            "dist2_x100": self.dist2 * 100.0,
            "target_token_count": self.target_token_count,
            "generated_token_count": self.generated_token_count,
            "sample_count": self.sample_count,
        }


def learning_rate_at(step: int, lr0: float, warmup: int) -> float:
    """Linear warmup to ``lr0`` at ``warmup`` steps, then inverse-sqrt decay."""
    if step < 1:
        raise ValueError("steps are 1-based")
    return lr0 * min(math.sqrt(warmup / step), step / warmup)


def total_loss(l_emo: Tensor, l_gen: Tensor, l_div: Tensor | float,
               gammas: tuple[float, float, float]) -> Tensor:
    g1, g2, g3 = gammas
    out = T.add(T.mul_scalar(l_emo, g1), T.mul_scalar(l_gen, g2))
    if isinstance(l_div, Tensor):
        out = T.add(out, T.mul_scalar(l_div, g3))
    elif l_div:
        out = T.add_scalar(out, g3 * float(l_div))
    return out


class InverseFrequencyLoss:
    """Diversity term: NLL re-weighted toward corpus-rare target tokens.

    Token weights are proportional to inverse unigram frequency over the
    training responses, normalized to mean 1 so the term stays on the same
    scale as the generation loss.
    """

    def __init__(self, samples: Sequence[DialogueSample], vocab):
        counts: dict[int, int] = {}
        total = 0
        for s in samples:
            for idx in vocab.encode(s.response) + [vocab.eos_id]:
                counts[idx] = counts.get(idx, 0) + 1
                total += 1
        inv = {idx: 1.0 / c for idx, c in counts.items()}
        mean_inv = sum(inv[idx] * counts[idx] for idx in inv) / total
        self._weights = {idx: inv[idx] / mean_inv for idx in inv}

    def __call__(self, nlls: Tensor, target_ids: Sequence[int]) -> Tensor:
        weights = np.array([[self._weights.get(t, 1.0)] for t in target_ids])
        weighted = T.mul(nlls, T.constant(weights, dtype=nlls.dtype))
        return T.mul_scalar(T.tensor_sum(weighted), 1.0 / len(target_ids))


class Adam:
    """Adam over a named parameter set; step order is fixed by name order."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self._v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float, grad_scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in self.params:
            p = self.params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif grad_scale != 1.0:
                g = g * grad_scale
            m = self._m[name] = b1 * self._m[name] + (1.0 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1.0 - b2) * (g * g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype, copy=False)


@dataclass
class TrainingResult:
    steps: int
    history: list[dict]
    stopped_early: bool
    best_validation: float | None


def _sample_losses(network: ResponderNetwork, sample: DialogueSample,
                   hyper: HyperParams, diversity, train: bool):
    l_emo, l_gen, fp = network.losses(sample, train=train)
    if diversity is not None:
        l_div = diversity(token_nlls(fp.distributions, fp.target_ids), fp.target_ids)
    else:
        l_div = 0.0
    loss = total_loss(l_emo, l_gen, l_div,
                      (hyper.gamma_emotion, hyper.gamma_generation, hyper.gamma_diversity))
    return l_emo, l_gen, l_div, loss


def _check_finite(step: int, **terms: float) -> None:
    for name, value in terms.items():
        if not math.isfinite(value):
            raise TrainingDiverged(name, step)


def validation_loss(network: ResponderNetwork, samples: Sequence[DialogueSample],
                    hyper: HyperParams, diversity=None) -> float:
    totals = 0.0
    for s in samples:
        *_, loss = _sample_losses(network, s, hyper, diversity, train=False)
        totals += loss.item()
    return totals / len(samples)


def train(network: ResponderNetwork, train_samples: Sequence[DialogueSample],
          hyper: HyperParams, val_samples: Sequence[DialogueSample] | None = None,
          log_path=None) -> TrainingResult:
    """Optimize the network in place; returns the per-step history.

    Each optimizer step averages gradients over one mini-batch.  Training is
    deterministic for a fixed seed: shuffling, dropout, and parameter
    initialization all derive from it.
    """
    diversity = None
    if hyper.diversity == "inverse_frequency":
        diversity = InverseFrequencyLoss(train_samples, network.vocab)
    elif hyper.diversity != "off":
        raise ValueError(f"unknown diversity loss {hyper.diversity!r}")
    adam = Adam(network.parameters(), hyper.beta1, hyper.beta2, hyper.adam_eps)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 2]))
    history: list[dict] = []
    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    step = 0
    best_val: float | None = None
    bad_rounds = 0
    stopped = False
    try:
        for epoch in range(hyper.epochs):
            order = shuffle_rng.permutation(len(train_samples))
            for start in range(0, len(order), hyper.batch_size):
                batch = order[start:start + hyper.batch_size]
                step += 1
                lr = learning_rate_at(step, hyper.learning_rate, hyper.warmup_steps)
                adam.zero_grad()
                sums = {"l_emo": 0.0, "l_gen": 0.0, "l_div": 0.0, "total": 0.0}
                for idx in batch:
                    with Tape() as tape:
                        l_emo, l_gen, l_div, loss = _sample_losses(
                            network, train_samples[int(idx)], hyper, diversity, train=True)
                        tape.backward(loss)
                    sums["l_emo"] += l_emo.item()
                    sums["l_gen"] += l_gen.item()
                    sums["l_div"] += l_div.item() if isinstance(l_div, Tensor) else float(l_div)
                    sums["total"] += loss.item()
                n = len(batch)
                record = {"step": step,
                          "l_emo": sums["l_emo"] / n,
                          "l_gen": sums["l_gen"] / n,
                          "l_div": sums["l_div"] / n,
                          "total": sums["total"] / n,
                          "lr": lr}
                _check_finite(step, **{k: v for k, v in record.items() if k != "step"})
                adam.step(lr, grad_scale=1.0 / n)
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                if hyper.max_steps is not None and step >= hyper.max_steps:
                    return TrainingResult(step, history, stopped, best_val)
            if val_samples:
                val = validation_loss(network, val_samples, hyper, diversity)
                _check_finite(step, validation_total=val)
                if log_fh:
                    log_fh.write(json.dumps({"step": step, "validation_total": val}) + "\n")
                if best_val is None or val < best_val:
                    best_val = val
                    bad_rounds = 0
                else:
                    bad_rounds += 1
                    if bad_rounds >= hyper.patience:
                        stopped = True
                        break
    finally:
        if log_fh:
            log_fh.close()
    return TrainingResult(step, history, stopped, best_val)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def perplexity_from_totals(nll_sum: float, token_count: int) -> float:
    if token_count == 0:
        raise ValueError("no tokens to score")
    return math.exp(nll_sum / token_count)


def corpus_nll(network: ResponderNetwork, samples: Sequence[DialogueSample]) -> tuple[float, int]:
    """Summed teacher-forced NLL and token count over an evaluation set."""
    total, count = 0.0, 0
    for s in samples:
        fp = network.forward(s, train=False)
        nlls = token_nlls(fp.distributions, fp.target_ids)
        total += float(nlls.data.sum())
        count += len(fp.target_ids)
    return total, count


def perplexity(network: ResponderNetwork, samples: Sequence[DialogueSample]) -> float:
    """Exponential of the token-mean teacher-forced NLL over the set."""
    if not samples:
        raise ValueError("empty evaluation set")
    total, count = corpus_nll(network, samples)
    return perplexity_from_totals(total, count)


def distinct_n(responses: Iterable[Sequence[str]], n: int) -> float:
    """Corpus-level ratio of unique n-grams to total n-grams."""
    if n not in (1, 2):
        raise ValueError(f"distinct-n defined for n in {{1, 2}}, got {n}")
    seen: set[tuple[str, ...]] = set()
    total = 0
    for resp in responses:
        resp = list(resp)
        for i in range(len(resp) - n + 1):
            seen.add(tuple(resp[i:i + n]))
            total += 1
    return len(seen) / total if total else 0.0


def emotion_accuracy(predictions: Sequence[int], golds: Sequence[int]) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} golds")
    if not golds:
        raise ValueError("empty evaluation set")
    return sum(int(p == g) for p, g in zip(predictions, golds)) / len(golds)


def evaluate(network: ResponderNetwork, samples: Sequence[DialogueSample],
             max_decode_steps: int = 30, strategy: str = "greedy",
             beam_width: int = 4) -> tuple[MetricReport, list[dict]]:
    """Full automatic evaluation; also returns per-sample generation records."""
    if not samples:
        raise ValueError("empty evaluation set")
    nll_sum, token_count = 0.0, 0
    preds, golds = [], []
    records = []
    responses = []
    for s in samples:
        fp = network.forward(s, train=False)
        nll_sum += float(token_nlls(fp.distributions, fp.target_ids).data.sum())
        token_count += len(fp.target_ids)
        pred = int(np.argmax(fp.p_emo.data))
        gold = network.label_index(s.emotion)
        preds.append(pred)
        golds.append(gold)
        generated = network.generate(s, strategy=strategy, max_steps=max_decode_steps,
                                     beam_width=beam_width)
        responses.append(generated)
        records.append({
            "id": s.id,
            "generated": generated,
            "reference": list(s.response),
            "predicted_emotion": network.labels[pred],
            "gold_emotion": s.emotion,
        })
    report = MetricReport(
        ppl=perplexity_from_totals(nll_sum, token_count),
        emotion_accuracy=emotion_accuracy(preds, golds),
        dist1=distinct_n(responses, 1),
        dist2=distinct_n(responses, 2),
        target_token_count=token_count,
        generated_token_count=sum(len(r) for r in responses),
        sample_count=len(samples),
    )
    report.validate()
    return report, records


def run_variant(variant: str, config: ModelConfig, vocab, train_samples,
                hyper: HyperParams, eval_samples=None, val_samples=None,
                labels=None, store=None, embedding_matrix=None,
                max_decode_steps: int = 30) -> tuple[MetricReport, ResponderNetwork]:
    """Train one wiring variant from scratch and evaluate it.

    All variants share the seed and data they are given, so a sweep over
    ``VARIANTS`` yields a like-for-like comparison table.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    network = ResponderNetwork(config, vocab, labels=labels, store=store,
                               variant=variant, seed=hyper.seed,
                               embedding_matrix=embedding_matrix)
    train(network, train_samples, hyper, val_samples=val_samples)
    report, _ = evaluate(network, eval_samples if eval_samples is not None else train_samples,
                         max_decode_steps=max_decode_steps)
    return report, network
