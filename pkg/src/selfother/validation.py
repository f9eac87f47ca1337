"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

from .corpus import CorpusError, DialogueSample


def check_dialogue_samples(X, labels: list[str]) -> list[DialogueSample]:
    """Validate a sample collection, returning it as a concrete list."""
    if X is None:
        raise ValueError("X must be a sequence of dialogue samples, got None")
    samples = list(X)
    if not samples:
        raise ValueError("X must contain at least one dialogue sample")
    for i, s in enumerate(samples):
        if not isinstance(s, DialogueSample):
            raise TypeError(f"X[{i}] is {type(s).__name__}, expected DialogueSample")
        try:
            s.validate(labels)
        except CorpusError as exc:
            raise ValueError(f"X[{i}]: {exc}") from exc
    return samples


def check_positive(name: str, value: int | float) -> None:
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
