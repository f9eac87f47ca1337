"""Per-utterance commonsense vectors for the five inferential relations.

Vectors normally come from an offline exporter file (see
``docs/knowledge.schema.json``); for tests and desk runs a deterministic
synthetic provider fills in any missing entry.  The store itself is
immutable after construction; the only trainable piece is the linear
projection from the raw vector width to the model width, which is attached
by the network that owns it.
"""

from __future__ import annotations

import hashlib
import json
from enum import Enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Relation(str, Enum):
    X_REACT = "xReact"
    X_INTENT = "xIntent"
    X_NEED = "xNeed"
    X_WANT = "xWant"
    X_EFFECT = "xEffect"


EMOTIONAL_RELATION = Relation.X_REACT
COGNITIVE_RELATIONS = (Relation.X_INTENT, Relation.X_NEED, Relation.X_WANT, Relation.X_EFFECT)
ALL_RELATIONS = (EMOTIONAL_RELATION,) + COGNITIVE_RELATIONS


class KnowledgeFormatError(ValueError):
    """A knowledge file violates its documented schema."""


@dataclass(frozen=True)
class KnowledgeEntry:
    dialogue_id: str
    utt_index: int
    relation: Relation
    vector: np.ndarray
    text: str | None = None


def synthetic_vectors(tokens, relation: Relation | str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in vector for one (utterance, relation) pair.

    Hash-seeded so the same inputs always produce the same vector and
    different relations almost surely differ.  Values lie in [-1, 1].
    """
    if dim < 1:
        raise ValueError(f"vector width must be positive, got {dim}")
    rel = relation.value if isinstance(relation, Relation) else str(relation)
    key = "\x1f".join([str(seed), rel, " ".join(tokens)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-1.0, 1.0, size=dim)


class KnowledgeStore:
    """Lookup of (dialogue id, utterance index, relation) -> vector."""

    def __init__(self, entries: dict[tuple[str, int, str], KnowledgeEntry], dim: int):
        self._entries = entries
        self.dim = dim
        self._fallback_tokens: dict[tuple[str, int], tuple[str, ...]] | None = None
        self._fallback_seed = 0
        self.projection: tuple[Tensor, Tensor] | None = None

    def __len__(self) -> int:
        return len(self._entries)

    @classmethod
    def load(cls, path) -> "KnowledgeStore":
        """Read a line-delimited knowledge file, enforcing a constant width."""
        path = Path(path)
        entries: dict[tuple[str, int, str], KnowledgeEntry] = {}
        dim: int | None = None
        with path.open("r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    entry = KnowledgeEntry(
                        dialogue_id=str(record["dialogue_id"]),
                        utt_index=int(record["utt_index"]),
                        relation=Relation(record["relation"]),
                        vector=np.asarray(record["vector"], dtype=np.float64),
                        text=record.get("text"),
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise KnowledgeFormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
                except ValueError as exc:
                    raise KnowledgeFormatError(f"{path}:{lineno}: {exc}") from exc
                if entry.vector.ndim != 1:
                    raise KnowledgeFormatError(f"{path}:{lineno}: vector must be 1-d")
                if not np.all(np.isfinite(entry.vector)):
                    raise KnowledgeFormatError(f"{path}:{lineno}: non-finite vector component")
                if dim is None:
                    dim = entry.vector.shape[0]
                elif entry.vector.shape[0] != dim:
                    raise KnowledgeFormatError(
                        f"{path}:{lineno}: vector width {entry.vector.shape[0]} "
                        f"differs from first entry width {dim}")
                key = (entry.dialogue_id, entry.utt_index, entry.relation.value)
                if key in entries:
                    raise KnowledgeFormatError(f"{path}:{lineno}: duplicate key {key}")
                entries[key] = entry
        if dim is None:
            raise KnowledgeFormatError(f"{path}: no entries")
        return cls(entries, dim)

    @classmethod
    def synthetic(cls, samples, dim: int, seed: int = 0) -> "KnowledgeStore":
        """Cover a whole corpus with deterministic synthetic vectors."""
        store = cls({}, dim)
        store.attach_fallback(samples, seed)
        return store

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for key in sorted(self._entries):
                e = self._entries[key]
                record = {
                    "dialogue_id": e.dialogue_id,
                    "utt_index": e.utt_index,
                    "relation": e.relation.value,
                    "vector": e.vector.tolist(),
                }
                if e.text is not None:
                    record["text"] = e.text
                fh.write(json.dumps(record) + "\n")

    def attach_fallback(self, samples, seed: int = 0) -> None:
        """Enable synthetic vectors for any key the file did not cover."""
        index: dict[tuple[str, int], tuple[str, ...]] = {}
        for s in samples:
            for i, (_, tokens) in enumerate(s.utterances):
                index[(s.id, i)] = tokens
        self._fallback_tokens = index
        self._fallback_seed = seed

    def attach_projection(self, weight: Tensor, bias: Tensor) -> None:
        if weight.shape[0] != self.dim:
            raise KnowledgeFormatError(
                f"projection expects input width {weight.shape[0]}, store width is {self.dim}")
        self.projection = (weight, bias)

    def get(self, dialogue_id: str, utt_index: int, relation: Relation | str) -> np.ndarray:
        rel = relation.value if isinstance(relation, Relation) else str(relation)
        entry = self._entries.get((dialogue_id, utt_index, rel))
        if entry is not None:
            return entry.vector
        if self._fallback_tokens is not None:
            tokens = self._fallback_tokens.get((dialogue_id, utt_index))
            if tokens is not None:
                return synthetic_vectors(tokens, rel, self.dim, self._fallback_seed)
        raise LookupError(
            f"no knowledge entry for ({dialogue_id!r}, {utt_index}, {rel}) and no fallback")


def node_init_vectors(store: KnowledgeStore, dialogue_id: str,
                      utt_index: int) -> tuple[Tensor, Tensor]:
    """Initial vectors for one utterance's knowledge nodes.

    The emotional node projects the reaction-relation vector; the cognitive
    node projects the mean of the four cognitive-relation vectors.  Both
    results have shape (1, model width).
    """
    if store.projection is None:
        raise RuntimeError("no projection attached to the knowledge store")
    weight, bias = store.projection
    emotional_raw = store.get(dialogue_id, utt_index, EMOTIONAL_RELATION)
    cognitive_raw = np.mean(
        [store.get(dialogue_id, utt_index, r) for r in COGNITIVE_RELATIONS], axis=0)
    dtype = weight.dtype
    emotional = T.add(T.matmul(T.constant(emotional_raw.reshape(1, -1), dtype=dtype), weight), bias)
    cognitive = T.add(T.matmul(T.constant(cognitive_raw.reshape(1, -1), dtype=dtype), weight), bias)
    return emotional, cognitive
