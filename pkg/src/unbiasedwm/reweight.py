"""Reweighting functions over the probability simplex.

A reweighter maps a token distribution ``P`` and a watermark code ``E`` to a
new distribution ``R_E(P)``. ``delta``, ``gamma`` and ``gumbel_delta`` are
unbiased: averaging ``R_E(P)`` over the code distribution returns ``P``.
``hard_red`` and ``soft_red`` are the red/green-list baselines, which are not.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .prob import sample_index

KINDS = ("delta", "gamma", "hard_red", "soft_red", "gumbel_delta")
UNBIASED_KINDS = ("delta", "gamma", "gumbel_delta")
RED_LIST_KINDS = ("hard_red", "soft_red")

# CLI spellings
ALIASES = {"soft": "soft_red", "hard": "hard_red", "gumbel": "gumbel_delta"}


class UnsupportedError(ValueError):
    pass


# --- watermark code values -------------------------------------------------

@dataclass(frozen=True)
class UnitReal:
    u: float

    def __post_init__(self):
        if not 0.0 <= self.u < 1.0:
            raise ValueError(f"unit code must lie in [0, 1), got {self.u}")


class _ArrayCode:
    def __eq__(self, other):
        return type(self) is type(other) and np.array_equal(self._array(), other._array())

    def __hash__(self):
        return hash((type(self).__name__, self._array().tobytes()))


@dataclass(frozen=True, eq=False)
class Permutation(_ArrayCode):
    """Shuffled token order: ``order[i]`` is the token ranked ``i + 1``."""

    order: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        if not np.array_equal(np.sort(order), np.arange(order.size)):
            raise ValueError("permutation code is not a bijection")
        object.__setattr__(self, "order", order)

    @property
    def ranks(self) -> np.ndarray:
        """1-based rank ``E(t)`` of every token ``t``."""
        r = np.empty_like(self.order)
        r[self.order] = np.arange(1, self.order.size + 1)
        return r

    def _array(self):
        return self.order


@dataclass(frozen=True, eq=False)
class RedGreenPartition(_ArrayCode):
    green: np.ndarray
    gamma_frac: float = 0.5

    def __post_init__(self):
        green = np.asarray(self.green, dtype=bool)
        expected = green_count(green.size, self.gamma_frac)
        if int(green.sum()) != expected:
            raise ValueError(f"partition has {int(green.sum())} greens, expected {expected}")
        object.__setattr__(self, "green", green)

    def _array(self):
        return self.green


@dataclass(frozen=True, eq=False)
class GumbelVector(_ArrayCode):
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    def _array(self):
        return self.values


def green_count(vocab_size: int, gamma_frac: float) -> int:
    return int(math.floor(gamma_frac * vocab_size))


# --- reweighting functions -------------------------------------------------

def delta_reweight(dist, code: UnitReal) -> np.ndarray:
    """Point mass on the inverse-transform sample of ``dist`` at ``code.u``."""
    p = np.asarray(dist, dtype=np.float64)
    out = np.zeros_like(p)
    out[sample_index(p, code.u)] = 1.0
    return out


def gamma_reweight(dist, code: Permutation) -> np.ndarray:
    p = np.asarray(dist, dtype=np.float64)
    pp = p[code.order]
    cum = np.cumsum(pp)
    shifted = np.clip(2.0 * cum - 1.0, 0.0, 1.0)
    # round-off: F reaches 1 at the last token with mass, so zero-mass tails stay 0
    shifted[np.flatnonzero(pp)[-1]:] = 1.0
    out = np.empty_like(p)
    out[code.order] = np.diff(shifted, prepend=0.0)
    return out


def hard_red_reweight(dist, code: RedGreenPartition) -> np.ndarray:
    p = np.asarray(dist, dtype=np.float64)
    kept = np.where(code.green, p, 0.0)
    mass = kept.sum()
    if not mass > 0:
        raise ValueError("all mass red")
    return kept / mass


def soft_red_reweight(dist, code: RedGreenPartition, delta_logit: float) -> np.ndarray:
    p = np.asarray(dist, dtype=np.float64)
    w = p * np.where(code.green, math.exp(delta_logit), 1.0)
    return w / w.sum()


def gumbel_delta_reweight(dist, code: GumbelVector) -> np.ndarray:
    p = np.asarray(dist, dtype=np.float64)
    out = np.zeros_like(p)
    out[gumbel_argmax(p, code.values)] = 1.0
    return out


def gumbel_argmax(dist, gumbels) -> int:
    """``argmax log P + G`` over the support of ``P``; lowest index wins ties."""
    with np.errstate(divide="ignore"):
        keys = np.log(dist) + gumbels
    return int(np.argmax(keys))


# --- reweighter descriptor --------------------------------------------------

@dataclass(frozen=True)
class Reweighter:
    kind: str
    delta_logit: Optional[float] = None
    gamma_frac: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reweighter kind {self.kind!r}")
        if self.kind in RED_LIST_KINDS:
            if self.gamma_frac is None or not 0 < self.gamma_frac < 1:
                raise ValueError("red-list reweighting needs gamma_frac in (0, 1)")
        elif self.gamma_frac is not None:
            raise ValueError(f"{self.kind} takes no gamma_frac")
        if self.kind == "soft_red":
            if self.delta_logit is None or self.delta_logit < 0:
                raise ValueError("soft_red needs delta_logit >= 0")
        elif self.delta_logit is not None:
            raise ValueError(f"{self.kind} takes no delta_logit")

    @property
    def unbiased(self) -> bool:
        return self.kind in UNBIASED_KINDS

    def apply(self, dist, code) -> np.ndarray:
        if self.kind == "delta":
            return delta_reweight(dist, code)
        if self.kind == "gamma":
            return gamma_reweight(dist, code)
        if self.kind == "hard_red":
            return hard_red_reweight(dist, code)
        if self.kind == "soft_red":
            return soft_red_reweight(dist, code, self.delta_logit)
        return gumbel_delta_reweight(dist, code)

    __call__ = apply

    def random_code(self, vocab_size: int, rng: np.random.Generator):
        """Draw a code from the code prior with a numpy generator."""
        if self.kind == "delta":
            return UnitReal(float(rng.random()))
        if self.kind == "gamma":
            return Permutation(rng.permutation(vocab_size))
        if self.kind == "gumbel_delta":
            return GumbelVector(rng.gumbel(size=vocab_size))
        green = np.zeros(vocab_size, dtype=bool)
        green[rng.permutation(vocab_size)[: green_count(vocab_size, self.gamma_frac)]] = True
        return RedGreenPartition(green, self.gamma_frac)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.delta_logit is not None:
            d["delta_logit"] = self.delta_logit
        if self.gamma_frac is not None:
            d["gamma_frac"] = self.gamma_frac
        return d


def make_reweighter(kind: str, delta_logit: Optional[float] = None,
                    gamma_frac: float = 0.5) -> Reweighter:
    """Build a reweighter, filling baseline defaults (``delta_logit=1``, ``gamma_frac=1/2``)."""
    kind = ALIASES.get(kind, kind)
    if kind in RED_LIST_KINDS:
        if kind == "soft_red" and delta_logit is None:
            delta_logit = 1.0
        return Reweighter(kind, delta_logit if kind == "soft_red" else None, gamma_frac)
    return Reweighter(kind)


# --- exact code enumeration ------------------------------------------------

def delta_pieces(dists) -> list[tuple[float, UnitReal]]:
    """Partition [0, 1) at every CDF breakpoint of ``dists``.

    Returns ``(length, code)`` pairs with the code at each piece's midpoint;
    every distribution's delta reweighting is constant on each piece.
    """
    cuts = {0.0, 1.0}
    for p in dists:
        cuts.update(float(c) for c in np.cumsum(p) if 0.0 < c < 1.0)
    cuts = sorted(cuts)
    top = np.nextafter(1.0, 0.0)  # a cut within one ulp of 1 can round the midpoint up
    return [(b - a, UnitReal(min(0.5 * (a + b), top))) for a, b in zip(cuts, cuts[1:]) if b > a]


def enumerate_codes(rw: Reweighter, vocab_size: int, dists=()):
    """Finite code space with weights: list of ``(weight, code)``.

    ``dists`` are the distributions the codes will be applied to; only the
    delta kind needs them.
    """
    if rw.kind == "delta":
        return delta_pieces(dists)
    if rw.kind == "gamma":
        if vocab_size > 6:
            raise UnsupportedError("exact gamma enumeration needs |vocab| <= 6")
        perms = list(itertools.permutations(range(vocab_size)))
        w = 1.0 / len(perms)
        return [(w, Permutation(np.array(pi))) for pi in perms]
    if rw.kind in RED_LIST_KINDS:
        if vocab_size > 16:
            raise UnsupportedError("exact partition enumeration needs |vocab| <= 16")
        k = green_count(vocab_size, rw.gamma_frac)
        combos = list(itertools.combinations(range(vocab_size), k))
        out = []
        for c in combos:
            green = np.zeros(vocab_size, dtype=bool)
            green[list(c)] = True
            out.append((1.0 / len(combos), RedGreenPartition(green, rw.gamma_frac)))
        return out
    raise UnsupportedError("gumbel_delta codes have no finite enumeration")


@dataclass
class UnbiasedReport:
    kind: str
    mode: str
    mean: np.ndarray
    max_abs_error: float
    passed: bool
    tolerance: np.ndarray = field(repr=False)


def verify_unbiased(rw: Reweighter, dist, mode: str = "exact", n_samples: int = 100_000,
                    seed: int = 0) -> UnbiasedReport:
    """Compare the code-averaged reweighted distribution against ``dist``.

    ``exact`` integrates or enumerates the code space; ``monte_carlo`` draws
    ``n_samples`` codes and allows 4 per-token Bernoulli standard errors.
    """
    p = np.asarray(dist, dtype=np.float64)
    if mode == "exact":
        mean = np.zeros_like(p)
        for w, code in enumerate_codes(rw, p.size, [p]):
            mean += w * rw.apply(p, code)
        tol = np.full(p.size, 1e-12)
    elif mode == "monte_carlo":
        rng = np.random.default_rng(seed)
        if rw.kind == "gumbel_delta":
            # vectorised draw; identical rule to gumbel_argmax
            with np.errstate(divide="ignore"):
                logp = np.log(p)
            picks = np.argmax(logp + rng.gumbel(size=(n_samples, p.size)), axis=1)
            mean = np.bincount(picks, minlength=p.size) / n_samples
        else:
            total = np.zeros_like(p)
            for _ in range(n_samples):
                total += rw.apply(p, rw.random_code(p.size, rng))
            mean = total / n_samples
        tol = 4.0 * np.sqrt(mean * (1.0 - mean) / n_samples)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    err = np.abs(mean - p)
    return UnbiasedReport(rw.kind, mode, mean, float(err.max()), bool(np.all(err <= tol)), tol)
