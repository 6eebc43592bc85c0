"""Experiment drivers: substitution attack, AUC, robustness, sensitivity,
exact undetectability and type-I error checks on toy models."""
from __future__ import annotations

import csv
import itertools
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .detect import DEFAULT_GRID, green_z_score, replay_and_score, threshold
from .generate import DEFAULT_WINDOW, generate, generate_plain, watermark_step
from .keyed import CodeHistory, WatermarkKey, context_code
from .models import LanguageModel, TableLM, load_model
from .prob import SamplingPolicy, apply_policy
from .reweight import RED_LIST_KINDS, Reweighter, enumerate_codes, make_reweighter

DEFAULT_EPSILONS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class ExperimentConfig:
    model: str = "uniform:size=256"
    reweight: str = "delta"
    delta_logit: Optional[float] = None
    gamma_frac: float = 0.5
    key_path: Optional[str] = None
    key_seed: int = 0
    context_window: int = DEFAULT_WINDOW
    temperature: float = 1.0
    top_k: Optional[int] = None
    grid: Sequence[float] = DEFAULT_GRID
    alpha: float = 0.05
    n_trials: int = 512
    n_tokens: int = 16
    prompt_len: int = 4
    epsilons: Sequence[float] = DEFAULT_EPSILONS
    n_bootstrap: int = 1000
    n_shots: int = 1
    history_mode: str = "persist"
    max_len: Optional[int] = None
    master_seed: int = 0
    out: Optional[str] = None
    figure: Optional[str] = None

    def __post_init__(self):
        if any(not 0 <= e <= 1 for e in self.epsilons):
            raise ValueError("attack fractions must lie in [0, 1]")
        if self.n_trials < 1 or self.n_bootstrap < 1 or self.n_shots < 1:
            raise ValueError("trial counts must be >= 1")
        if self.history_mode not in ("persist", "reset-per-run"):
            raise ValueError(f"unknown history mode {self.history_mode!r}")

    @property
    def policy(self) -> SamplingPolicy:
        return SamplingPolicy(self.temperature, self.top_k)

    def reweighter(self) -> Reweighter:
        return make_reweighter(self.reweight, self.delta_logit, self.gamma_frac)

    def key(self) -> WatermarkKey:
        if self.key_path:
            return WatermarkKey.load(self.key_path)
        return WatermarkKey.from_seed(sub_seed(self.key_seed, "key"))


def sub_seed(master: int, *labels) -> int:
    """Deterministic child seed from a master seed and string/int labels."""
    words = [int(master)]
    for lab in labels:
        words.append(zlib.crc32(lab.encode()) if isinstance(lab, str) else int(lab))
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def random_prompts(vocab_size: int, n: int, length: int, seed: int) -> list[list[int]]:
    rng = np.random.default_rng(seed)
    return rng.integers(0, vocab_size, size=(n, length)).tolist()


# --- attack and AUC ----------------------------------------------------------------

def attack_substitute(tokens: Sequence[int], epsilon: float, rng: np.random.Generator,
                      vocab_size: int) -> list[int]:
    """Replace ``floor(epsilon * n)`` distinct positions by uniform random tokens.

    Positions and replacements come from one permutation and one length-``n``
    draw, so the same generator state gives nested attacks as ``epsilon`` grows.
    """
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    out = [int(t) for t in tokens]
    n = len(out)
    k = int(np.floor(epsilon * n + 1e-12))
    positions = rng.permutation(n)[:k]
    replacements = rng.integers(0, vocab_size, size=n)[:k]
    for pos, tok in zip(positions, replacements):
        out[pos] = int(tok)
    return out


def auc(watermarked_scores, null_scores) -> float:
    """Mann-Whitney estimate of ``P(W > N) + P(W = N) / 2``."""
    w = np.asarray(watermarked_scores, dtype=np.float64)
    n = np.asarray(null_scores, dtype=np.float64)
    if w.size == 0 or n.size == 0:
        raise ValueError("AUC needs non-empty score lists")
    gt = (w[:, None] > n[None, :]).mean()
    eq = (w[:, None] == n[None, :]).mean()
    return float(gt + 0.5 * eq)


def _rank_auc(w, n):
    ranks = stats.rankdata(np.concatenate([w, n]))
    u = ranks[: w.size].sum() - w.size * (w.size + 1) / 2
    return u / (w.size * n.size)


def bootstrap_auc_se(watermarked_scores, null_scores, n_boot: int, seed: int) -> float:
    """Standard error of the AUC, resampling prompts (paired positions) with replacement."""
    w = np.asarray(watermarked_scores, dtype=np.float64)
    n = np.asarray(null_scores, dtype=np.float64)
    rng = np.random.default_rng(seed)
    k = min(w.size, n.size)
    vals = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, k, size=k)
        vals[b] = _rank_auc(w[idx], n[idx])
    return float(vals.std(ddof=1))


# --- robustness ---------------------------------------------------------------

@dataclass
class RobustnessResult:
    rows: list[dict]
    watermarked: dict = field(repr=False, default_factory=dict)
    null: dict = field(repr=False, default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _sequence_score(cfg, lm, key, rw, prompt, tokens):
    if rw.kind in RED_LIST_KINDS:
        return green_z_score(prompt, tokens, key, lm.vocab_size, cfg.context_window, rw.gamma_frac)
    rep = replay_and_score(prompt, tokens, lm, key, rw, cfg.context_window, cfg.policy, cfg.grid,
                           alpha=cfg.alpha)
    return rep.total_score


def run_robustness(cfg: ExperimentConfig, lm: Optional[LanguageModel] = None) -> RobustnessResult:
    """AUC of watermarked-vs-plain detection scores under substitution attacks.

    Null population: plain generations from the same prompts, attacked the
    same way and scored with the true key.
    """
    lm = lm or load_model(cfg.model)
    key, rw, V = cfg.key(), cfg.reweighter(), lm.vocab_size
    prompts = random_prompts(V, cfg.n_trials, cfg.prompt_len, sub_seed(cfg.master_seed, "prompts"))
    wm, plain = [], []
    for i, prompt in enumerate(prompts):
        wm.append(generate(lm, key, prompt, cfg.n_tokens, rw, cfg.context_window, cfg.policy,
                           CodeHistory(), sub_seed(cfg.master_seed, "wm", i)).tokens)
        plain.append(generate_plain(lm, prompt, cfg.n_tokens, cfg.policy,
                                    sub_seed(cfg.master_seed, "plain", i)).tokens)
    rows, w_scores, n_scores = [], {}, {}
    for eps in cfg.epsilons:
        ws, ns = [], []
        for i, prompt in enumerate(prompts):
            a = attack_substitute(wm[i], eps, np.random.default_rng(sub_seed(cfg.master_seed, "atk-w", i)), V)
            b = attack_substitute(plain[i], eps, np.random.default_rng(sub_seed(cfg.master_seed, "atk-n", i)), V)
            ws.append(_sequence_score(cfg, lm, key, rw, prompt, a))
            ns.append(_sequence_score(cfg, lm, key, rw, prompt, b))
        w_scores[eps], n_scores[eps] = np.array(ws), np.array(ns)
        rows.append({
            "epsilon": eps,
            "auc": auc(ws, ns),
            "stderr": bootstrap_auc_se(ws, ns, cfg.n_bootstrap, sub_seed(cfg.master_seed, "boot", int(eps * 1000))),
        })
    meta = {"model": lm.spec, "reweight": rw.describe(), "n_prompts": cfg.n_trials,
            "n_tokens": cfg.n_tokens, "null_population": "plain generations scored with the true key"}
    return RobustnessResult(rows, w_scores, n_scores, meta)


# --- exact undetectability ----------------------------------------------------

@dataclass
class UndetectabilityReport:
    reweight: dict
    n_shots: int
    history_mode: str
    max_abs_error: float
    rows: list[tuple] = field(repr=False)  # (strings, watermarked, reference)


def marginal_probability(lm: LanguageModel, rw: Reweighter, strings: Sequence[Sequence[int]],
                         prompt: Sequence[int] = (), m: int = 255,
                         policy: SamplingPolicy = SamplingPolicy(),
                         history_mode: str = "persist") -> tuple[float, float]:
    """Key-averaged probability of producing ``strings`` in successive requests.

    Codes are treated as ideal: one independent draw per distinct context
    code, enumerated exactly. Steps sharing a context code share that draw.
    Returns ``(watermarked, unwatermarked)``.
    """
    groups: dict[bytes, list] = {}
    reference = 1.0
    skipped_factor = 1.0
    h = CodeHistory()
    for string in strings:
        if history_mode == "reset-per-run":
            h = CodeHistory()
        seq = [int(t) for t in prompt]
        for x in string:
            p = apply_policy(lm.next_distribution(seq), policy)
            reference *= p[x]
            c = context_code(seq, m)
            if c in h:
                skipped_factor *= p[x]
            else:
                h.insert(c)
                groups.setdefault(c.code_bytes, []).append((p, int(x)))
            seq.append(int(x))
    total = skipped_factor
    V = lm.vocab_size
    for uses in groups.values():
        avg = 0.0
        for w, code in enumerate_codes(rw, V, [p for p, _ in uses]):
            prod = w
            for p, x in uses:
                prod *= rw.apply(p, code)[x]
            avg += prod
        total *= avg
    return total, reference


def run_undetectability(cfg: ExperimentConfig, lm: Optional[LanguageModel] = None,
                        m: Optional[int] = None) -> UndetectabilityReport:
    """Exact key-marginal vs unwatermarked probabilities on a table model.

    One shot: every string of length 1..depth. ``n_shots > 1``: every tuple of
    strings of length ``max_len`` (default 2).
    """
    lm = lm or load_model(cfg.model)
    if not isinstance(lm, TableLM):
        raise ValueError("exact undetectability needs a table model")
    V = lm.vocab_size
    if V > 3 or lm.depth > 3:
        raise ValueError("model too large for exact enumeration (needs |vocab| <= 3, depth <= 3)")
    rw = cfg.reweighter()
    m = m or 255
    if cfg.n_shots == 1:
        max_len = cfg.max_len or lm.depth
        cases = [(s,) for L in range(1, max_len + 1) for s in itertools.product(range(V), repeat=L)]
    else:
        L = cfg.max_len or 2
        singles = list(itertools.product(range(V), repeat=L))
        cases = list(itertools.product(singles, repeat=cfg.n_shots))
    if len(cases) > 20000:
        raise ValueError("model too large for exact enumeration")
    rows, worst = [], 0.0
    for case in cases:
        wm, ref = marginal_probability(lm, rw, case, (), m, cfg.policy, cfg.history_mode)
        rows.append((case, wm, ref))
        worst = max(worst, abs(wm - ref))
    return UndetectabilityReport(rw.describe(), cfg.n_shots, cfg.history_mode, worst, rows)


# --- type-I error -------------------------------------------------------------

@dataclass
class TypeOneResult:
    n_runs: int
    threshold: float
    exceedances: int
    max_constraint: float
    totals: np.ndarray = field(repr=False)

    @property
    def rate(self) -> float:
        return self.exceedances / self.n_runs


def run_type1(cfg: ExperimentConfig, lm: Optional[LanguageModel] = None) -> TypeOneResult:
    """Maximin detection on unwatermarked generations from ``cfg.model``."""
    lm = lm or load_model(cfg.model)
    key, rw, V = cfg.key(), cfg.reweighter(), lm.vocab_size
    t = threshold(cfg.alpha, len(cfg.grid))
    prompts = random_prompts(V, cfg.n_trials, cfg.prompt_len, sub_seed(cfg.master_seed, "prompts"))
    totals = np.empty(cfg.n_trials)
    worst = 0.0
    for i, prompt in enumerate(prompts):
        x = generate_plain(lm, prompt, cfg.n_tokens, cfg.policy, sub_seed(cfg.master_seed, "null", i))
        rep = replay_and_score(prompt, x.tokens, lm, key, rw, cfg.context_window, cfg.policy, cfg.grid,
                               alpha=cfg.alpha)
        totals[i] = rep.total_score
        worst = max(worst, rep.max_constraint)
    return TypeOneResult(cfg.n_trials, t, int((totals >= t).sum()), worst, totals)


# --- sensitivity --------------------------------------------------------------

SENSITIVITY_SETTINGS = (
    ("temperature", 0.5), ("temperature", 1.0), ("temperature", 1.5),
    ("top_k", 20), ("top_k", 50), ("top_k", 100), ("top_k", None),
)


@dataclass
class SensitivityResult:
    rows: list[dict]
    per_trial: dict = field(repr=False, default_factory=dict)
    sign_test: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _detect_policy(gen: SamplingPolicy, param: str, value) -> SamplingPolicy:
    if param == "temperature":
        return SamplingPolicy(value, gen.top_k)
    return SamplingPolicy(gen.temperature, value)


def _is_matched(gen: SamplingPolicy, param, value) -> bool:
    return _detect_policy(gen, param, value) == gen


def run_sensitivity(cfg: ExperimentConfig, lm: Optional[LanguageModel] = None,
                    kinds: Sequence[str] = ("delta", "gamma"),
                    settings: Sequence[tuple] = SENSITIVITY_SETTINGS) -> SensitivityResult:
    """Mean per-token score when detection uses a different temperature or top-k.

    Each sequence is scored at its own best grid point; per-token scores at
    fresh context codes are pooled across sequences. The sign test compares,
    trial by trial, the mismatch drop of each reweighter scaled by its
    population matched mean.
    """
    lm = lm or load_model(cfg.model)
    key, V, gen_policy = cfg.key(), lm.vocab_size, cfg.policy
    prompts = random_prompts(V, cfg.n_trials, cfg.prompt_len, sub_seed(cfg.master_seed, "prompts"))
    pooled = {(k, s): [] for k in kinds for s in settings}
    trial_mean = {(k, s): np.zeros(cfg.n_trials) for k in kinds for s in settings}
    for kind in kinds:
        rw = make_reweighter(kind)
        for i, prompt in enumerate(prompts):
            x = generate(lm, key, prompt, cfg.n_tokens, rw, cfg.context_window, gen_policy,
                         CodeHistory(), sub_seed(cfg.master_seed, "sens", i))
            cache: dict = {}
            for setting in settings:
                rep = replay_and_score(prompt, x.tokens, lm, key, rw, cfg.context_window,
                                       _detect_policy(gen_policy, *setting), cfg.grid,
                                       alpha=cfg.alpha, code_cache=cache)
                fresh = ~np.array(rep.skipped, dtype=bool)
                vals = rep.best_scores[fresh]
                pooled[(kind, setting)].append(vals)
                trial_mean[(kind, setting)][i] = vals.mean() if vals.size else 0.0
    rows = []
    for kind in kinds:
        for setting in settings:
            v = np.concatenate(pooled[(kind, setting)])
            rows.append({"parameter": setting[0], "value": "none" if setting[1] is None else setting[1],
                         "matched": _is_matched(gen_policy, *setting), "reweight": kind,
                         "mean": float(v.mean()), "sd": float(v.std(ddof=1)), "n_tokens": int(v.size)})
    sign = {}
    if set(kinds) >= {"delta", "gamma"}:
        matched = [s for s in settings if _is_matched(gen_policy, *s)][0]
        mismatched = [s for s in settings if not _is_matched(gen_policy, *s)]
        drop = {}
        for kind in ("delta", "gamma"):
            m_i = trial_mean[(kind, matched)]
            mm_i = np.mean([trial_mean[(kind, s)] for s in mismatched], axis=0)
            drop[kind] = (m_i - mm_i) / m_i.mean()
        wins = int((drop["gamma"] < drop["delta"]).sum())
        ties = int((drop["gamma"] == drop["delta"]).sum())
        n_eff = cfg.n_trials - ties
        p = stats.binomtest(wins, n_eff, 0.5, alternative="greater").pvalue if n_eff else 1.0
        sign = {"gamma_smaller_drop": wins, "n": n_eff, "p_value": float(p),
                "delta_relative_drop": float(drop["delta"].mean()),
                "gamma_relative_drop": float(drop["gamma"].mean())}
    meta = {"model": lm.spec, "generation_policy": {"temperature": gen_policy.temperature,
                                                    "top_k": gen_policy.top_k},
            "n_trials": cfg.n_trials, "n_tokens": cfg.n_tokens}
    return SensitivityResult(rows, trial_mean, sign, meta)


# --- tables -------------------------------------------------------------------

def write_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_scores(path) -> list[float]:
    """One score per line, or the last column of a CSV with a header."""
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    out = []
    for ln in lines:
        cell = ln.split(",")[-1]
        try:
            out.append(float(cell))
        except ValueError:
            if out:
                raise
    return out
