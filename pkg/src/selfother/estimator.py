"""Scikit-learn style estimator facade over the response network.

``EmpatheticResponder.fit`` takes a sequence of :class:`DialogueSample`
objects, builds the vocabulary and knowledge store, and trains the network;
``predict`` greedily decodes a response per dialogue.  Hyper-parameters
follow the sklearn convention (declared in ``__init__``, introspectable via
``get_params``), so the model drops into pipelines and grid searches.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import build_vocabulary, default_emotion_labels
from .checkpoint import restore_parameters, save_parameters
from .knowledge import KnowledgeStore
from .network import ModelConfig, ResponderNetwork
from .training import HyperParams, MetricReport, evaluate, train
from .validation import check_dialogue_samples, check_positive


class EmpatheticResponder(BaseEstimator):
    """Trainable empathetic response generator with emotion perception."""

    def __init__(self, hidden_dim: int = 300, heads: int = 6, encoder_layers: int = 2,
                 decoder_layers: int = 2, graph_layers: int = 2, ffn_dim: int = 600,
                 dropout: float = 0.1, knowledge_dim: int = 64, max_len: int = 128,
                 min_freq: int = 1, variant: str = "full",
                 gamma_emotion: float = 1.0, gamma_generation: float = 1.0,
                 gamma_diversity: float = 1.5, learning_rate: float = 1e-4,
                 warmup_steps: int = 4000, batch_size: int = 16, beta1: float = 0.9,
                 beta2: float = 0.98, epochs: int = 20, patience: int = 5,
                 max_steps: int | None = None, diversity: str = "off",
                 max_decode_steps: int = 30, strategy: str = "greedy",
                 beam_width: int = 4, empty_slice_mode: str = "zero",
                 precision: str = "float64", seed: int = 0):
        self.hidden_dim = hidden_dim
        self.heads = heads
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.graph_layers = graph_layers
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.knowledge_dim = knowledge_dim
        self.max_len = max_len
        self.min_freq = min_freq
        self.variant = variant
        self.gamma_emotion = gamma_emotion
        self.gamma_generation = gamma_generation
        self.gamma_diversity = gamma_diversity
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.epochs = epochs
        self.patience = patience
        self.max_steps = max_steps
        self.diversity = diversity
        self.max_decode_steps = max_decode_steps
        self.strategy = strategy
        self.beam_width = beam_width
        self.empty_slice_mode = empty_slice_mode
        self.precision = precision
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_dim=self.hidden_dim, heads=self.heads,
            encoder_layers=self.encoder_layers, decoder_layers=self.decoder_layers,
            graph_layers=self.graph_layers, ffn_dim=self.ffn_dim, dropout=self.dropout,
            knowledge_dim=self.knowledge_dim, max_len=self.max_len,
            empty_slice_mode=self.empty_slice_mode, precision=self.precision)

    def _hyper_params(self) -> HyperParams:
        return HyperParams(
            gamma_emotion=self.gamma_emotion, gamma_generation=self.gamma_generation,
            gamma_diversity=self.gamma_diversity, learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps, batch_size=self.batch_size,
            beta1=self.beta1, beta2=self.beta2, epochs=self.epochs,
            patience=self.patience, max_steps=self.max_steps,
            diversity=self.diversity, seed=self.seed)

    def fit(self, X, y=None, validation=None, knowledge: KnowledgeStore | None = None,
            labels: list[str] | None = None,
            embedding_matrix: np.ndarray | None = None) -> "EmpatheticResponder":
        """Train on dialogue samples.  ``y`` is ignored (targets live in X)."""
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        check_positive("batch_size", self.batch_size)
        labels = labels if labels is not None else default_emotion_labels()
        samples = check_dialogue_samples(X, labels)
        self.labels_ = labels
        self.vocab_ = build_vocabulary(samples, min_freq=self.min_freq)
        if knowledge is None:
            knowledge = KnowledgeStore.synthetic(samples, self.knowledge_dim, seed=self.seed)
        self.store_ = knowledge
        config = self._model_config()
        if config.knowledge_dim != knowledge.dim:
            config.knowledge_dim = knowledge.dim
        self.network_ = ResponderNetwork(
            config, self.vocab_, labels=labels, store=knowledge, variant=self.variant,
            seed=self.seed, embedding_matrix=embedding_matrix)
        self.history_ = train(self.network_, samples, self._hyper_params(),
                              val_samples=validation)
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "network_"):
            raise NotFittedError(
                "this EmpatheticResponder is not fitted yet; call fit first")

    def predict(self, X) -> list[list[str]]:
        """Generate one token sequence per dialogue."""
        self._require_fitted()
        samples = check_dialogue_samples(X, self.labels_)
        return [self.network_.generate(s, strategy=self.strategy,
                                       max_steps=self.max_decode_steps,
                                       beam_width=self.beam_width)
                for s in samples]

    def predict_emotion(self, X) -> list[str]:
        self._require_fitted()
        samples = check_dialogue_samples(X, self.labels_)
        return [self.labels_[self.network_.predict_emotion_index(s)] for s in samples]

    def evaluate(self, X) -> MetricReport:
        self._require_fitted()
        samples = check_dialogue_samples(X, self.labels_)
        report, _ = evaluate(self.network_, samples, max_decode_steps=self.max_decode_steps,
                             strategy=self.strategy, beam_width=self.beam_width)
        return report

    def score(self, X, y=None) -> float:
        """Emotion perception accuracy (higher is better)."""
        self._require_fitted()
        samples = check_dialogue_samples(X, self.labels_)
        correct = sum(
            int(self.network_.predict_emotion_index(s) == self.network_.label_index(s.emotion))
            for s in samples)
        return correct / len(samples)

    def save_checkpoint(self, path) -> None:
        self._require_fitted()
        save_parameters(self.network_.parameters(), path)

    def load_checkpoint(self, path) -> None:
        self._require_fitted()
        restore_parameters(self.network_.parameters(), path)
