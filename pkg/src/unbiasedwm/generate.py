"""Watermarked and plain autoregressive generation, plus transcript files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .keyed import CodeHistory, ContextCode, WatermarkKey, context_code, derive_code
from .models import LanguageModel
from .prob import SamplingPolicy, apply_policy, sample_index
from .reweight import Reweighter

DEFAULT_WINDOW = 5


@dataclass
class Step:
    """One reweighting step: policy-adjusted ``p``, served ``q``."""

    p: np.ndarray
    q: np.ndarray
    context: ContextCode
    skipped: bool
    code: object = None


def watermark_step(lm: LanguageModel, tokens: Sequence[int], key: WatermarkKey, rw: Reweighter,
                   m: int, policy: SamplingPolicy, history: CodeHistory) -> Step:
    """Distribution served after ``tokens`` (prompt + generated so far).

    Mutates ``history`` when the context code is fresh.
    """
    p = apply_policy(lm.next_distribution(tokens), policy)
    c = context_code(tokens, m)
    if c in history:
        return Step(p, p, c, True)
    history.insert(c)
    code = derive_code(c, key, rw, p.size)
    return Step(p, rw.apply(p, code), c, False, code)


@dataclass
class Transcript:
    prompt: list[int]
    tokens: list[int]
    model: str
    policy: SamplingPolicy = field(default_factory=SamplingPolicy)
    reweight: Optional[dict] = None
    key_fingerprint: Optional[str] = None
    context_window: int = DEFAULT_WINDOW
    skipped: list[bool] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def watermarked(self) -> bool:
        return self.reweight is not None

    def header(self) -> dict:
        return {
            "record": "transcript",
            "model": self.model,
            "reweight": self.reweight,
            "key_fingerprint": self.key_fingerprint,
            "context_window": self.context_window,
            "temperature": self.policy.temperature,
            "top_k": self.policy.top_k,
            "seed": self.seed,
            "prompt": list(map(int, self.prompt)),
            "n_tokens": len(self.tokens),
        }

    def to_lines(self) -> list[str]:
        lines = [json.dumps(self.header(), sort_keys=True)]
        skipped = self.skipped or [False] * len(self.tokens)
        for i, (t, s) in enumerate(zip(self.tokens, skipped)):
            lines.append(json.dumps({"i": i, "skipped": bool(s), "token": int(t)}, sort_keys=True))
        return lines

    def with_tokens(self, tokens) -> "Transcript":
        """Copy carrying edited tokens; generation-time flags no longer apply."""
        return Transcript(list(self.prompt), [int(t) for t in tokens], self.model, self.policy,
                          self.reweight, self.key_fingerprint, self.context_window, [], self.seed)


def generate(lm: LanguageModel, key: WatermarkKey, prompt: Sequence[int], n_tokens: int,
             rw: Reweighter, m: int = DEFAULT_WINDOW, policy: SamplingPolicy = SamplingPolicy(),
             history: Optional[CodeHistory] = None, rng_seed: int = 0) -> Transcript:
    """Watermarked generation.

    ``history`` is updated in place; pass the same object across calls to
    keep context codes unique over many generations.
    """
    if n_tokens < 0:
        raise ValueError("n_tokens must be >= 0")
    if history is None:
        history = CodeHistory()
    rng = np.random.default_rng(rng_seed)
    seq = [int(t) for t in prompt]
    out, skipped = [], []
    for _ in range(n_tokens):
        step = watermark_step(lm, seq, key, rw, m, policy, history)
        x = sample_index(step.q, rng.random())
        seq.append(x)
        out.append(x)
        skipped.append(step.skipped)
    return Transcript(list(map(int, prompt)), out, lm.spec, policy, rw.describe(), key.fingerprint,
                      m, skipped, rng_seed)


def generate_plain(lm: LanguageModel, prompt: Sequence[int], n_tokens: int,
                   policy: SamplingPolicy = SamplingPolicy(), rng_seed: int = 0) -> Transcript:
    if n_tokens < 0:
        raise ValueError("n_tokens must be >= 0")
    rng = np.random.default_rng(rng_seed)
    seq = [int(t) for t in prompt]
    out = []
    for _ in range(n_tokens):
        x = sample_index(apply_policy(lm.next_distribution(seq), policy), rng.random())
        seq.append(x)
        out.append(x)
    return Transcript(list(map(int, prompt)), out, lm.spec, policy, seed=rng_seed,
                      skipped=[False] * n_tokens)


# --- files -------------------------------------------------------------------

def write_transcripts(path, transcripts: Sequence[Transcript]) -> None:
    lines = [ln for t in transcripts for ln in t.to_lines()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_transcripts(path) -> list[Transcript]:
    out: list[Transcript] = []
    current = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("record") == "transcript":
            current = Transcript(
                prompt=list(rec["prompt"]), tokens=[], model=rec["model"],
                policy=SamplingPolicy(rec["temperature"], rec["top_k"]),
                reweight=rec["reweight"], key_fingerprint=rec["key_fingerprint"],
                context_window=rec["context_window"], skipped=[], seed=rec["seed"])
            out.append(current)
        elif current is None:
            raise ValueError(f"line {lineno}: token record before any transcript header")
        else:
            if rec["i"] != len(current.tokens):
                raise ValueError(f"line {lineno}: token index out of order")
            current.tokens.append(int(rec["token"]))
            current.skipped.append(bool(rec["skipped"]))
    return out
