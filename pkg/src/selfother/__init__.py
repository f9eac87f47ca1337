"""Empathetic response generation with explicit self/other awareness states."""

from .tensor import Tensor, Tape, backward, DimensionError
from .corpus import (DialogueSample, Vocabulary, EncoderInput, CorpusError,
                     assemble_encoder_input, build_vocabulary, default_emotion_labels,
                     load_corpus, load_emotion_labels, load_pretrained_embeddings,
                     tokenize)
from .knowledge import (Relation, KnowledgeEntry, KnowledgeStore, KnowledgeFormatError,
                        node_init_vectors, synthetic_vectors)
from .encoder import EncoderConfig, ContextStates, encode
from .network import ModelConfig, ResponderNetwork, VARIANTS
from .training import (HyperParams, MetricReport, TrainingDiverged, distinct_n,
                       emotion_accuracy, evaluate, perplexity, run_variant,
                       total_loss, train)
from .estimator import EmpatheticResponder
from .checkpoint import load_parameters, restore_parameters, save_parameters

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "backward", "DimensionError",
    "DialogueSample", "Vocabulary", "EncoderInput", "CorpusError",
    "assemble_encoder_input", "build_vocabulary", "default_emotion_labels",
    "load_corpus", "load_emotion_labels", "load_pretrained_embeddings", "tokenize",
    "Relation", "KnowledgeEntry", "KnowledgeStore", "KnowledgeFormatError",
    "node_init_vectors", "synthetic_vectors",
    "EncoderConfig", "ContextStates", "encode",
    "ModelConfig", "ResponderNetwork", "VARIANTS",
    "HyperParams", "MetricReport", "TrainingDiverged", "distinct_n",
    "emotion_accuracy", "evaluate", "perplexity", "run_variant", "total_loss", "train",
    "EmpatheticResponder",
    "load_parameters", "restore_parameters", "save_parameters",
]
