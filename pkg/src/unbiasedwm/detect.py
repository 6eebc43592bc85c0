"""Score-based watermark detection.

Every score vector ``S`` produced here satisfies ``<P, exp(S)> <= 1`` on the
support of ``P``, so under the null the summed score exceeds ``t`` with
probability at most ``exp(-t)`` (``A * exp(-t)`` after a grid search over
``A`` perturbation strengths).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .keyed import CodeHistory, WatermarkKey, context_code, derive_code
from .models import LanguageModel
from .prob import SamplingPolicy, apply_policy
from .reweight import Reweighter

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))
LN2 = math.log(2.0)


def threshold(alpha: float, grid_size: int = 1) -> float:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if grid_size < 1:
        raise ValueError("grid size must be >= 1")
    return -math.log(alpha) + math.log(grid_size)


def p_value_bound(total_score: float, grid_size: int = 1) -> tuple[float, float]:
    """``(raw, clamped)`` upper bounds ``A * exp(-total)``; raw may exceed 1."""
    with np.errstate(over="ignore"):
        raw = float(grid_size * np.exp(-np.float64(total_score)))
    return raw, min(1.0, raw)


def llr_scores(P, Q) -> np.ndarray:
    """``log(Q/P)`` on the support of ``P``; 0 elsewhere (never observed under H0)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError("vocabulary mismatch")
    S = np.zeros_like(P)
    s = P > 0
    with np.errstate(divide="ignore"):
        S[s] = np.log(Q[s]) - np.log(P[s])
    return S


def maximin_grid(P, Q, grid: Sequence[float], d_prime: float = 0.0) -> np.ndarray:
    """Maximin score vectors for every perturbation radius in ``grid``.

    Returns an array of shape ``(len(grid), |vocab|)``. Row ``a`` maximises
    ``<Q, S> + d (min S - max S)`` subject to ``<P', exp(S)> <= 1`` for every
    ``P'`` within TV ``d_prime`` of ``P``, where ``d = grid[a]``.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError("vocabulary mismatch")
    D = np.asarray(grid, dtype=np.float64)
    if D.ndim != 1 or D.size == 0:
        raise ValueError("grid must be a non-empty vector")
    if np.any((D < 0) | (D > 1)) or not 0 <= d_prime <= 1:
        raise ValueError("perturbation strengths must lie in [0, 1]")

    out = np.zeros((D.size, P.size))
    s = np.flatnonzero(P > 0)
    p, q = P[s], Q[s]
    n = s.size
    with np.errstate(over="ignore"):
        ratio = q / p  # inf for subnormal p is ordered correctly by the scans
    with np.errstate(divide="ignore"):
        r = np.log(q) - np.log(p)

    desc = np.argsort(-ratio, kind="stable")
    asc = desc[::-1]
    Dc = D[:, None]
    # top pool over the j largest ratios: level (Q(X) - d) / (P(X) + d'),
    # stop once it is no smaller than the next ratio
    num_hi = np.cumsum(q[desc]) - Dc
    den_hi = np.cumsum(p[desc]) + d_prime
    nxt_hi = np.append(ratio[desc][1:], 0.0)
    stop_hi = (num_hi > 0) & (num_hi >= nxt_hi * den_hi)
    # bottom pool over the j smallest ratios: level (Q(X) + d) / (P(X) - d')
    num_lo = np.cumsum(q[asc]) + Dc
    den_lo = np.cumsum(p[asc]) - d_prime
    nxt_lo = np.append(ratio[asc][1:], np.inf)
    with np.errstate(invalid="ignore"):
        stop_lo = (den_lo > 0) & (num_lo <= nxt_lo * np.where(den_lo > 0, den_lo, 1.0))

    j_hi = np.argmax(stop_hi, axis=1)
    j_lo = np.argmax(stop_lo, axis=1)
    rows = np.arange(D.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        top = np.log(num_hi[rows, j_hi]) - np.log(den_hi[j_hi])
        bottom = np.log(num_lo[rows, j_lo]) - np.log(den_lo[j_lo])
    nontrivial = (stop_hi.any(axis=1) & stop_lo.any(axis=1)
                  & (j_hi + j_lo + 2 <= n) & (top > bottom))

    rank = np.empty(n, dtype=np.int64)
    rank[desc] = np.arange(n)
    S = np.where(rank <= j_hi[:, None], top[:, None],
                 np.where(n - 1 - rank <= j_lo[:, None], bottom[:, None], r))
    out[:, s] = np.where(nontrivial[:, None], S, 0.0)
    if d_prime == 0.0:
        exact = np.flatnonzero(D == 0.0)
        if exact.size:
            out[exact] = llr_scores(P, Q)
    return out


def maximin_scores(P, Q, d: float, d_prime: float = 0.0) -> np.ndarray:
    return maximin_grid(P, Q, [d], d_prime)[0]


def admissibility(P, S) -> float:
    """``<P, exp(S)>`` restricted to the support of ``P``."""
    P = np.asarray(P, dtype=np.float64)
    s = P > 0
    return float(np.exp(logsumexp(np.asarray(S, dtype=np.float64)[s] + np.log(P[s]))))


def maximin_objective(Q, S, d: float) -> float:
    """Inner minimum over the TV ball: ``<Q, S> + d (min S - max S)``."""
    S = np.asarray(S)
    return float(np.dot(Q, S) + d * (S.min() - S.max()))


# --- reports ---------------------------------------------------------------

@dataclass
class DetectionReport:
    method: str
    tokens: list[int]
    contexts: list[str]
    skipped: list[bool]
    support_violation: list[bool]
    grid: list[float]
    scores: np.ndarray  # (n_tokens, grid_size)
    alpha: float = 0.05
    max_constraint: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def grid_size(self) -> int:
        return max(1, len(self.grid))

    @property
    def totals(self) -> np.ndarray:
        return self.scores.sum(axis=0) if len(self.tokens) else np.zeros(self.grid_size)

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.totals))

    @property
    def best_d(self) -> Optional[float]:
        return self.grid[self.best_index] if self.grid else None

    @property
    def total_score(self) -> float:
        return float(self.totals.max())

    @property
    def best_scores(self) -> np.ndarray:
        return self.scores[:, self.best_index] if len(self.tokens) else np.zeros(0)

    @property
    def threshold(self) -> float:
        return threshold(self.alpha, self.grid_size)

    @property
    def raw_bound(self) -> float:
        return p_value_bound(self.total_score, self.grid_size)[0]

    @property
    def p_value_bound(self) -> float:
        return p_value_bound(self.total_score, self.grid_size)[1]

    @property
    def detected(self) -> bool:
        return self.total_score >= self.threshold

    def to_dict(self) -> dict:
        best = self.best_scores
        return {
            "method": self.method,
            "grid": list(self.grid),
            "totals": [float(x) for x in self.totals],
            "best_d": self.best_d,
            "total_score": self.total_score,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "raw_p_value_bound": self.raw_bound,
            "p_value_bound": self.p_value_bound,
            "max_constraint": self.max_constraint,
            "metadata": self.metadata,
            "tokens": [
                {"i": i, "token": int(t), "context": c, "skipped": bool(sk),
                 "support_violation": bool(v), "score": float(sc)}
                for i, (t, c, sk, v, sc) in enumerate(zip(
                    self.tokens, self.contexts, self.skipped, self.support_violation, best))
            ],
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def replay_and_score(prompt: Sequence[int], tokens: Sequence[int], lm: LanguageModel,
                     key: WatermarkKey, rw: Reweighter, m: int = 5,
                     policy: SamplingPolicy = SamplingPolicy(), grid: Sequence[float] = DEFAULT_GRID,
                     history: Optional[CodeHistory] = None, alpha: float = 0.05,
                     d_prime: float = 0.0, code_cache: Optional[dict] = None) -> DetectionReport:
    """Likelihood-based detection by replaying the watermark pipeline.

    Repeated context codes score 0. A token outside the support of the
    detection-time distribution also scores 0 and is flagged.

    ``code_cache`` maps context bytes to derived codes and may be shared
    between calls that use the same key and reweighter.
    """
    grid = [float(d) for d in grid]
    if not grid:
        raise ValueError("empty d grid")
    h = history.copy() if history is not None else CodeHistory()
    V = lm.vocab_size
    seq = [int(t) for t in prompt]
    n = len(tokens)
    scores = np.zeros((n, len(grid)))
    contexts, skipped, violation = [], [], []
    worst = 0.0
    for i, x in enumerate(tokens):
        x = int(x)
        if not 0 <= x < V:
            raise ValueError(f"token id {x} outside vocabulary of size {V}")
        P = apply_policy(lm.next_distribution(seq), policy)
        c = context_code(seq, m)
        contexts.append(c.hex())
        bad = False
        if c in h:
            skipped.append(True)
        else:
            h.insert(c)
            skipped.append(False)
            if code_cache is None:
                code = derive_code(c, key, rw, V)
            else:
                code = code_cache.get(c.code_bytes)
                if code is None:
                    code = code_cache[c.code_bytes] = derive_code(c, key, rw, V)
            Q = rw.apply(P, code)
            if P[x] == 0.0:
                bad = True
            else:
                S = maximin_grid(P, Q, grid, d_prime)
                scores[i] = S[:, x]
                sup = P > 0
                worst = max(worst, float(np.exp(logsumexp(S[:, sup] + np.log(P[sup]), axis=1)).max()))
        violation.append(bad)
        seq.append(x)
    return DetectionReport("maximin", [int(t) for t in tokens], contexts, skipped, violation, grid,
                           scores, alpha, worst, {"reweight": rw.describe(), "context_window": m,
                                                  "d_prime": d_prime})


def gumbel_scores(prompt: Sequence[int], tokens: Sequence[int], key: WatermarkKey, vocab_size: int,
                  m: int = 5, history: Optional[CodeHistory] = None,
                  alpha: float = 0.05) -> DetectionReport:
    """Likelihood-agnostic score ``ln 2 - exp(-G(x_i))`` from the replayed Gumbel codes."""
    rw = Reweighter("gumbel_delta")
    h = history.copy() if history is not None else CodeHistory()
    seq = [int(t) for t in prompt]
    scores = np.zeros((len(tokens), 1))
    contexts, skipped = [], []
    for i, x in enumerate(tokens):
        x = int(x)
        if not 0 <= x < vocab_size:
            raise ValueError(f"token id {x} outside vocabulary of size {vocab_size}")
        c = context_code(seq, m)
        contexts.append(c.hex())
        if c in h:
            skipped.append(True)
        else:
            h.insert(c)
            skipped.append(False)
            g = derive_code(c, key, rw, vocab_size).values[x]
            scores[i, 0] = LN2 - math.exp(-g)
        seq.append(x)
    return DetectionReport("gumbel", [int(t) for t in tokens], contexts, skipped,
                           [False] * len(tokens), [], scores, alpha, float("nan"),
                           {"context_window": m})


def green_z_score(prompt: Sequence[int], tokens: Sequence[int], key: WatermarkKey, vocab_size: int,
                  m: int = 5, gamma_frac: float = 0.5,
                  history: Optional[CodeHistory] = None) -> float:
    """Red/green-list z statistic over tokens at fresh context codes."""
    rw = Reweighter("hard_red", gamma_frac=gamma_frac)
    h = history.copy() if history is not None else CodeHistory()
    seq = [int(t) for t in prompt]
    green = scored = 0
    for x in tokens:
        c = context_code(seq, m)
        if c not in h:
            h.insert(c)
            scored += 1
            green += bool(derive_code(c, key, rw, vocab_size).green[int(x)])
        seq.append(int(x))
    if scored == 0:
        raise ValueError("no scorable tokens")
    return (green - gamma_frac * scored) / math.sqrt(scored * gamma_frac * (1 - gamma_frac))
