"""Probability-simplex primitives.

Distributions are plain 1-D ``float64`` numpy arrays indexed by token id.
Token id order is the canonical order used by every CDF-based routine, at
generation time and at detection time alike.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


class Vocabulary:
    """Ordered, duplicate-free list of token strings; line number = token id."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if not tokens:
            raise ValueError("empty vocabulary")
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise ValueError(f"duplicate token {tok!r}")
            index[tok] = i
        self.tokens = tuple(tokens)
        self._index = index

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    def __repr__(self):
        return f"Vocabulary(size={self.size})"

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ValueError(f"token {token!r} not in vocabulary") from None

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)

    def to_file(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def numbered(cls, size: int, prefix: str = "t") -> "Vocabulary":
        return cls([f"{prefix}{i}" for i in range(size)])


@dataclass(frozen=True)
class SamplingPolicy:
    temperature: float = 1.0
    top_k: Optional[int] = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError(f"top_k must be a positive integer, got {self.top_k}")

    @property
    def is_identity(self) -> bool:
        return self.temperature == 1.0 and self.top_k is None


def check_distribution(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate ``p`` as a simplex member and return it as a float array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("distribution entries must be finite and non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def normalize(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("degenerate weights")
    return w / total


def log_softmax(logits) -> np.ndarray:
    """Max-shifted log-softmax; ``-inf`` entries stay ``-inf``."""
    logits = np.asarray(logits, dtype=np.float64)
    top = logits.max()
    if not np.isfinite(top):
        raise ValueError("degenerate weights")
    shifted = logits - top
    return shifted - np.log(np.exp(shifted).sum())


def apply_policy(dist, policy: SamplingPolicy) -> np.ndarray:
    """Temperature scaling followed by top-k truncation.

    Ties at the k-th largest probability go to the lower token index.
    """
    p = np.asarray(dist, dtype=np.float64)
    if policy.is_identity:
        return p
    if policy.top_k is not None and policy.top_k > p.size:
        raise ValueError(f"top_k={policy.top_k} exceeds vocabulary size {p.size}")
    if policy.temperature != 1.0:
        with np.errstate(divide="ignore"):
            logp = np.log(p)
        p = np.exp(log_softmax(logp / policy.temperature))
    if policy.top_k is not None and policy.top_k < p.size:
        # stable sort on -p keeps lower indices first among equal values
        keep = np.argsort(-p, kind="stable")[: policy.top_k]
        mask = np.zeros(p.size, dtype=bool)
        mask[keep] = True
        p = normalize(np.where(mask, p, 0.0))
    return p


def cdf(dist) -> np.ndarray:
    return np.cumsum(np.asarray(dist, dtype=np.float64))


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"vocabulary mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def renyi2_entropy(dist) -> float:
    p = np.asarray(dist, dtype=np.float64)
    return float(-np.log(np.dot(p, p)))


def sample_index(dist, u: float) -> int:
    """Inverse-CDF draw: first index whose cumulative mass exceeds ``u``.

    ``u`` is in [0, 1). Zero-probability entries are never returned; a ``u``
    beyond the float-rounded total falls back to the last supported index.
    """
    p = np.asarray(dist, dtype=np.float64)
    i = int(np.searchsorted(np.cumsum(p), u, side="right"))
    if i >= p.size:
        return int(np.flatnonzero(p)[-1])
    return i
