"""Dialogue ingestion, vocabulary, and encoder input assembly.

A corpus file is line-delimited JSON, one dialogue per line (see
``docs/formats.md`` and ``docs/corpus.schema.json``).  Dialogues are
flattened into a single token stream where every utterance is prefixed with
a speaker marker token, and each token carries a role id and a position id.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

SELF = "self"
OTHER = "other"
ROLE_IDS = {SELF: 0, OTHER: 1}

PAD, UNK, BOS, EOS, SLF_MARK, OTH_MARK = "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SLF]", "[OTH]"
RESERVED_TOKENS = (PAD, UNK, BOS, EOS, SLF_MARK, OTH_MARK)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusError(ValueError):
    """A corpus, label, or embedding file violates its documented format."""


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break off punctuation."""
    return _TOKEN_RE.findall(text.lower())


def default_emotion_labels() -> list[str]:
    text = resources.files("selfother.configs").joinpath("emotions.txt").read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def load_emotion_labels(path) -> list[str]:
    labels = [line.strip() for line in Path(path).read_text("utf-8").splitlines() if line.strip()]
    if len(labels) != len(set(labels)):
        raise CorpusError(f"{path}: duplicate emotion labels")
    if len(labels) != 32:
        raise CorpusError(f"{path}: expected 32 emotion labels, found {len(labels)}")
    return labels


@dataclass(frozen=True)
class DialogueSample:
    """One conversation: role-tagged context turns, an emotion, and the reply."""

    id: str
    utterances: tuple[tuple[str, tuple[str, ...]], ...]
    emotion: str
    response: tuple[str, ...]

    def validate(self, labels: list[str]) -> None:
        if not self.utterances:
            raise CorpusError(f"dialogue {self.id!r}: needs at least one utterance")
        for role, tokens in self.utterances:
            if role not in ROLE_IDS:
                raise CorpusError(f"dialogue {self.id!r}: unknown role {role!r}")
        if self.utterances[-1][0] != OTHER:
            raise CorpusError(
                f"dialogue {self.id!r}: last context utterance must come from the other")
        if self.emotion not in labels:
            raise CorpusError(f"dialogue {self.id!r}: unknown emotion label {self.emotion!r}")
        if not self.response:
            raise CorpusError(f"dialogue {self.id!r}: empty response")


def _parse_record(record: dict, labels: list[str]) -> DialogueSample:
    utterances = []
    for utt in record["utterances"]:
        utterances.append((utt["role"], tuple(utt["tokens"])))
    sample = DialogueSample(
        id=str(record["id"]),
        utterances=tuple(utterances),
        emotion=str(record["emotion"]).lower(),
        response=tuple(record["response"]),
    )
    sample.validate(labels)
    return sample


def load_corpus(path, labels: list[str] | None = None) -> list[DialogueSample]:
    """Read a line-delimited dialogue file, validating every record.

    Dialogue ids must be unique: knowledge lookups key on them.
    """
    labels = labels if labels is not None else default_emotion_labels()
    path = Path(path)
    samples = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record: {exc}") from exc
            try:
                sample = _parse_record(record, labels)
            except (KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: missing or malformed field: {exc}") from exc
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
            if sample.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate dialogue id {sample.id!r}")
            seen.add(sample.id)
            samples.append(sample)
    return samples


def save_corpus(samples, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            record = {
                "id": s.id,
                "utterances": [{"role": r, "tokens": list(t)} for r, t in s.utterances],
                "emotion": s.emotion,
                "response": list(s.response),
            }
            fh.write(json.dumps(record) + "\n")


class Vocabulary:
    """Token ids with fixed reserved slots.

    Ids 0..5 are PAD, UNK, BOS, EOS and the two speaker markers, in that
    order.  Remaining ids are assigned by descending frequency with
    lexicographic tie-breaking, so construction is deterministic and
    insensitive to sample order.
    """

    def __init__(self, tokens: list[str]):
        self._token_to_id = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for t in tokens:
            if t in self._token_to_id:
                raise CorpusError(f"token {t!r} collides with a reserved token")
            self._token_to_id[t] = len(self._token_to_id)
        self._id_to_token = {i: t for t, i in self._token_to_id.items()}

    def __len__(self) -> int:
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @property
    def pad_id(self) -> int: return 0
    @property
    def unk_id(self) -> int: return 1
    @property
    def bos_id(self) -> int: return 2
    @property
    def eos_id(self) -> int: return 3
    @property
    def slf_id(self) -> int: return 4
    @property
    def oth_id(self) -> int: return 5

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.token_of(i) for i in ids]

    def kept_tokens(self) -> list[str]:
        return [self._id_to_token[i] for i in range(len(RESERVED_TOKENS), len(self))]


def build_vocabulary(samples, min_freq: int = 1) -> Vocabulary:
    if not samples:
        raise CorpusError("cannot build a vocabulary from zero samples")
    counts: dict[str, int] = {}
    for s in samples:
        for _, tokens in s.utterances:
            for t in tokens:
                counts[t] = counts.get(t, 0) + 1
        for t in s.response:
            counts[t] = counts.get(t, 0) + 1
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED_TOKENS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class EncoderInput:
    """Flattened dialogue ready for the context encoder.

    ``marker_indices[i]`` is the position of the marker that opens
    utterance i (after any truncation); ``pad_mask`` is True at real
    positions and False on the padded tail.
    """

    token_ids: np.ndarray
    role_ids: np.ndarray
    positions: np.ndarray
    marker_indices: np.ndarray
    marker_roles: np.ndarray          # role id per marker
    self_mask: np.ndarray
    other_mask: np.ndarray
    pad_mask: np.ndarray
    utterance_offset: int = 0         # utterances dropped by truncation

    def __len__(self) -> int:
        return int(self.token_ids.shape[0])

    def self_marker_indices(self) -> np.ndarray:
        return self.marker_indices[self.marker_roles == ROLE_IDS[SELF]]

    def other_marker_indices(self) -> np.ndarray:
        return self.marker_indices[self.marker_roles == ROLE_IDS[OTHER]]


def assemble_encoder_input(sample: DialogueSample, vocab: Vocabulary,
                           max_len: int = 128) -> EncoderInput:
    """Flatten a dialogue into ``[marker, tokens...]`` blocks with metadata.

    If the flattened stream would exceed ``max_len``, whole utterances are
    dropped oldest-first; an utterance is never cut in the middle.
    """
    utterances = list(sample.utterances)
    lengths = [1 + len(tokens) for _, tokens in utterances]
    offset = 0
    while len(utterances) > 1 and sum(lengths) > max_len:
        utterances.pop(0)
        lengths.pop(0)
        offset += 1

    token_ids: list[int] = []
    role_ids: list[int] = []
    marker_indices: list[int] = []
    marker_roles: list[int] = []
    for role, tokens in utterances:
        marker_indices.append(len(token_ids))
        marker_roles.append(ROLE_IDS[role])
        marker = vocab.slf_id if role == SELF else vocab.oth_id
        token_ids.append(marker)
        token_ids.extend(vocab.encode(tokens))
        role_ids.extend([ROLE_IDS[role]] * (1 + len(tokens)))

    n = len(token_ids)
    roles = np.array(role_ids, dtype=np.intp)
    return EncoderInput(
        token_ids=np.array(token_ids, dtype=np.intp),
        role_ids=roles,
        positions=np.arange(n, dtype=np.intp),
        marker_indices=np.array(marker_indices, dtype=np.intp),
        marker_roles=np.array(marker_roles, dtype=np.intp),
        self_mask=roles == ROLE_IDS[SELF],
        other_mask=roles == ROLE_IDS[OTHER],
        pad_mask=np.ones(n, dtype=bool),
        utterance_offset=offset,
    )


def pad_encoder_input(inp: EncoderInput, length: int,
                      pad_id: int = 0) -> EncoderInput:
    """Extend an assembled input with masked padding positions."""
    n = len(inp)
    if length < n:
        raise CorpusError(f"cannot pad length {n} down to {length}")
    extra = length - n
    return EncoderInput(
        token_ids=np.concatenate([inp.token_ids, np.full(extra, pad_id, dtype=np.intp)]),
        role_ids=np.concatenate([inp.role_ids, np.zeros(extra, dtype=np.intp)]),
        positions=np.arange(length, dtype=np.intp),
        marker_indices=inp.marker_indices.copy(),
        marker_roles=inp.marker_roles.copy(),
        self_mask=np.concatenate([inp.self_mask, np.zeros(extra, dtype=bool)]),
        other_mask=np.concatenate([inp.other_mask, np.zeros(extra, dtype=bool)]),
        pad_mask=np.concatenate([inp.pad_mask, np.zeros(extra, dtype=bool)]),
        utterance_offset=inp.utterance_offset,
    )


def load_pretrained_embeddings(path, vocab: Vocabulary, dim: int,
                               seed: int = 0) -> np.ndarray:
    """Build the shared embedding matrix from a word-vector text file.

    Each line is a token followed by ``dim`` reals.  Tokens missing from the
    file (including the reserved ones) are drawn from N(0, 0.02^2) with a
    fixed seed, so the matrix is deterministic for a given vocabulary.
    """
    rng = np.random.default_rng(seed)
    matrix = rng.normal(0.0, 0.02, size=(len(vocab), dim))
    seen = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: vector has {len(values)} components, expected {dim}")
            if token in vocab and token not in seen:
                matrix[vocab.id_of(token)] = [float(v) for v in values]
                seen.add(token)
    return matrix
