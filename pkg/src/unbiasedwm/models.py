"""Toy autoregressive language models.

Every model maps a prefix of token ids to a next-token distribution and is
stateless: the same prefix always gives the same distribution.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .prob import SIMPLEX_TOL, Vocabulary, check_distribution


class LanguageModel:
    vocab: Vocabulary
    spec: str = ""

    def next_distribution(self, prefix: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    @property
    def vocab_size(self) -> int:
        return self.vocab.size


class UniformLM(LanguageModel):
    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.spec = f"uniform:size={vocab.size}"
        self._p = np.full(vocab.size, 1.0 / vocab.size)
        self._p.flags.writeable = False

    def next_distribution(self, prefix):
        return self._p


def uniform_lm(vocab: Vocabulary) -> UniformLM:
    return UniformLM(vocab)


class NGramLM(LanguageModel):
    """Add-alpha smoothed n-gram model.

    The context is the last ``min(order - 1, len(prefix))`` tokens, so short
    prefixes use lower-order counts; a context never seen in the corpus gives
    the uniform distribution.
    """

    def __init__(self, corpus: Sequence[Sequence[int]], vocab: Vocabulary, order: int = 2,
                 alpha: float = 0.1):
        if order < 1:
            raise ValueError("n-gram order must be >= 1")
        if not alpha > 0:
            raise ValueError("smoothing alpha must be positive")
        if not any(len(s) for s in corpus):
            raise ValueError("empty corpus")
        self.vocab = vocab
        self.order = order
        self.alpha = float(alpha)
        self.spec = f"ngram:order={order},alpha={alpha}"
        counts: dict[tuple, Counter] = defaultdict(Counter)
        for seq in corpus:
            seq = list(seq)
            for i, tok in enumerate(seq):
                for h in range(min(order - 1, i) + 1):
                    counts[tuple(seq[i - h:i])][tok] += 1
        self._counts = counts
        self._cache: dict[tuple, np.ndarray] = {}

    def next_distribution(self, prefix):
        h = min(self.order - 1, len(prefix))
        ctx = tuple(int(t) for t in prefix[len(prefix) - h:]) if h else ()
        p = self._cache.get(ctx)
        if p is None:
            w = np.full(self.vocab.size, self.alpha)
            c = self._counts.get(ctx)
            if c:
                ids = np.fromiter(c.keys(), dtype=np.int64)
                w[ids] += np.fromiter(c.values(), dtype=np.float64)
            p = w / w.sum()
            p.flags.writeable = False
            self._cache[ctx] = p
        return p


def ngram_lm(corpus, order: int = 2, alpha: float = 0.1, vocab: Vocabulary | None = None) -> NGramLM:
    """Fit an n-gram model on token-string sequences.

    Without an explicit vocabulary the sorted set of corpus tokens is used.
    """
    corpus = [list(s) for s in corpus]
    if not any(corpus):
        raise ValueError("empty corpus")
    if vocab is None:
        vocab = Vocabulary(sorted({t for s in corpus for t in s}))
    return NGramLM([vocab.encode(s) for s in corpus], vocab, order, alpha)


def read_corpus(path) -> list[list[str]]:
    """Whitespace-separated tokens; each non-empty line is one sequence."""
    text = Path(path).read_text(encoding="utf-8")
    return [line.split() for line in text.splitlines() if line.split()]


class TableLM(LanguageModel):
    """Explicit conditional distributions keyed by the full prefix."""

    def __init__(self, rows: dict[tuple, np.ndarray], vocab: Vocabulary | None = None):
        if not rows:
            raise ValueError("empty table")
        sizes = {len(r) for r in rows.values()}
        if len(sizes) != 1:
            raise ValueError("table rows have different lengths")
        size = sizes.pop()
        self.vocab = vocab or Vocabulary([str(i) for i in range(size)])
        if self.vocab.size != size:
            raise ValueError("table rows do not match the vocabulary size")
        self.rows = {}
        for prefix, row in rows.items():
            p = check_distribution(row, SIMPLEX_TOL)
            p.flags.writeable = False
            if any(not 0 <= t < size for t in prefix):
                raise ValueError(f"prefix {prefix} has an out-of-vocabulary id")
            self.rows[tuple(prefix)] = p
        self.depth = max(len(k) for k in self.rows) + 1
        self.spec = "table"

    def next_distribution(self, prefix):
        key = tuple(int(t) for t in prefix)
        try:
            return self.rows[key]
        except KeyError:
            raise KeyError(f"table model has no row for prefix {key}") from None

    @classmethod
    def parse(cls, text: str) -> "TableLM":
        rows = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "|" not in line:
                raise ValueError(f"line {lineno}: expected 'prefix | probabilities'")
            left, right = line.split("|", 1)
            prefix = tuple(int(t) for t in left.split())
            if prefix in rows:
                raise ValueError(f"line {lineno}: duplicate prefix {prefix}")
            rows[prefix] = np.array([float(x) for x in right.split()])
        return cls(rows)

    @classmethod
    def from_file(cls, path) -> "TableLM":
        lm = cls.parse(Path(path).read_text(encoding="utf-8"))
        lm.spec = f"table:path={path}"
        return lm

    def to_text(self) -> str:
        lines = []
        for prefix in sorted(self.rows, key=lambda k: (len(k), k)):
            probs = " ".join(repr(float(x)) for x in self.rows[prefix])
            lines.append(f"{' '.join(map(str, prefix))} | {probs}".lstrip())
        return "\n".join(lines) + "\n"


def table_lm(path) -> TableLM:
    return TableLM.from_file(path)


# --- bundled models ---------------------------------------------------------

def data_path(name: str) -> Path:
    return Path(str(resources.files("unbiasedwm") / "data" / name))


def toy_ngram(order: int = 2, alpha: float = 0.05) -> NGramLM:
    lm = ngram_lm(read_corpus(data_path("toy_corpus.txt")), order, alpha)
    lm.spec = f"toy:order={order},alpha={alpha}"
    return lm


def toy_table() -> TableLM:
    lm = TableLM.parse(data_path("toy3.table").read_text(encoding="utf-8"))
    lm.spec = "toy-table"
    return lm


def warmup_table() -> TableLM:
    lm = TableLM.parse(data_path("warmup.table").read_text(encoding="utf-8"))
    lm.spec = "warmup"
    return lm


def _parse_opts(rest: str) -> dict[str, str]:
    opts = {}
    for part in filter(None, rest.split(",")):
        if "=" not in part:
            raise ValueError(f"model option {part!r} is not key=value")
        k, v = part.split("=", 1)
        opts[k.strip()] = v.strip()
    return opts


def load_model(spec: str) -> LanguageModel:
    """Build a model from a spec string.

    ``uniform:size=N``, ``ngram:corpus=PATH[,order=N][,alpha=A][,vocab=PATH]``,
    ``table:path=PATH``, ``toy[:order=N,alpha=A]``, ``toy-table``, ``warmup``.
    """
    name, _, rest = spec.partition(":")
    opts = _parse_opts(rest)
    if name == "uniform":
        lm = UniformLM(Vocabulary.numbered(int(opts.get("size", 256))))
    elif name == "ngram":
        if "corpus" not in opts:
            raise ValueError("ngram model needs corpus=PATH")
        vocab = Vocabulary.from_file(opts["vocab"]) if "vocab" in opts else None
        lm = ngram_lm(read_corpus(opts["corpus"]), int(opts.get("order", 2)),
                      float(opts.get("alpha", 0.1)), vocab)
    elif name == "table":
        if "path" not in opts:
            raise ValueError("table model needs path=PATH")
        lm = TableLM.from_file(opts["path"])
    elif name == "toy":
        lm = toy_ngram(int(opts.get("order", 2)), float(opts.get("alpha", 0.05)))
    elif name == "toy-table":
        lm = toy_table()
    elif name == "warmup":
        lm = warmup_table()
    else:
        raise ValueError(f"unknown model spec {spec!r}")
    lm.spec = spec
    return lm
