import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unbiasedwm.prob import check_distribution, normalize
from unbiasedwm.reweight import (GumbelVector, Permutation, RedGreenPartition, Reweighter, UnitReal,
                                 UnsupportedError, delta_pieces, delta_reweight, enumerate_codes,
                                 gamma_reweight, gumbel_delta_reweight, hard_red_reweight,
                                 make_reweighter, soft_red_reweight, verify_unbiased)


def simplex(min_size=1, max_size=6):
    return st.lists(st.floats(0, 10, allow_nan=False), min_size=min_size, max_size=max_size) \
        .filter(lambda w: sum(w) > 1e-3).map(normalize)


def gamma_oracle(p, ranks):
    """Rational-arithmetic reference: P'(t) = F'(E(t)) - F'(E(t) - 1)."""
    p = [Fraction(x) for x in p]

    def F(i):
        return sum((pt for pt, e in zip(p, ranks) if e <= i), Fraction(0))

    def Fs(i):
        return max(2 * F(i) - 1, Fraction(0))

    return [Fs(e) - Fs(e - 1) for e in ranks]


# --- delta ------------------------------------------------------------------

def test_delta_examples():
    np.testing.assert_array_equal(delta_reweight([0.9, 0.1], UnitReal(0.3)), [1, 0])
    np.testing.assert_array_equal(delta_reweight([0.9, 0.1], UnitReal(0.95)), [0, 1])
    for u in (0.0, 0.5, 0.999999):
        np.testing.assert_array_equal(delta_reweight([0, 0, 1], UnitReal(u)), [0, 0, 1])


def test_delta_breakpoint_is_half_open():
    # cdf(0) = 0.5 is not > 0.5, so u = 0.5 belongs to token 1
    np.testing.assert_array_equal(delta_reweight([0.5, 0.5], UnitReal(0.5)), [0, 1])
    with pytest.raises(ValueError):
        UnitReal(1.0)


@given(simplex())
def test_delta_preimage_measure(p):
    """Measure of {u : delta(P, u) = delta_t} equals P(t)."""
    mass = np.zeros_like(p)
    for w, code in delta_pieces([p]):
        mass[np.argmax(delta_reweight(p, code))] += w
    np.testing.assert_allclose(mass, p, atol=1e-12)


# --- gamma ------------------------------------------------------------------

def test_gamma_examples():
    a = gamma_reweight([0.9, 0.1], Permutation([0, 1]))
    b = gamma_reweight([0.9, 0.1], Permutation([1, 0]))
    np.testing.assert_allclose(a, [0.8, 0.2], atol=1e-15)
    np.testing.assert_allclose(b, [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose((a + b) / 2, [0.9, 0.1], atol=1e-15)


@settings(max_examples=150)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(simplex(n, n), st.permutations(range(n)))))
def test_gamma_matches_rational_oracle(case):
    p, order = case
    code = Permutation(order)
    ours = gamma_reweight(p, code)
    ref = gamma_oracle(p, list(code.ranks))
    np.testing.assert_allclose(ours, [float(x) for x in ref], atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_gamma_average_is_exact(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        p = rng.dirichlet(np.ones(n))
        # rational oracle over all n! permutations
        pf = [Fraction(x) for x in p]
        pf = [x / sum(pf) for x in pf]
        total = [Fraction(0)] * n
        perms = list(itertools.permutations(range(1, n + 1)))
        for ranks in perms:
            total = [a + b for a, b in zip(total, gamma_oracle(pf, ranks))]
        assert [t / len(perms) for t in total] == pf
        np.testing.assert_allclose(np.mean([gamma_reweight(p, Permutation(np.argsort(r)))
                                            for r in perms], axis=0), p, atol=1e-12)
        assert verify_unbiased(Reweighter("gamma"), p).max_abs_error <= 1e-12


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(simplex(n, n), st.permutations(range(n)))))
def test_gamma_rejects_left_half(case):
    """Positive mass sits on a suffix of the shuffled order, past cumulative mass 1/2."""
    p, order = case
    q = gamma_reweight(p, Permutation(order))[list(order)]
    cum = np.cumsum(p[list(order)])
    assert np.all(q[cum < 0.5 - 1e-12] == 0)
    # tokens entirely past the half-way point get exactly twice their mass
    past = cum - p[list(order)] >= 0.5 + 1e-12
    np.testing.assert_allclose(q[past], 2 * p[list(order)][past], atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_gamma_support_size_uniform(n):
    p = np.full(n, 1.0 / n)
    for order in itertools.permutations(range(n)):
        assert (gamma_reweight(p, Permutation(order)) > 1e-15).sum() <= math.ceil(n / 2) + 1


def test_permutation_validation():
    with pytest.raises(ValueError):
        Permutation([0, 0, 1])
    np.testing.assert_array_equal(Permutation([2, 0, 1]).ranks, [2, 3, 1])


# --- red list ---------------------------------------------------------------

def part(bits, frac=0.5):
    return RedGreenPartition(np.array(bits, dtype=bool), frac)


def test_hard_red_examples():
    np.testing.assert_array_equal(hard_red_reweight([0.9, 0.1], part([1, 0])), [1, 0])
    np.testing.assert_array_equal(hard_red_reweight([0.9, 0.1], part([0, 1])), [0, 1])
    with pytest.raises(ValueError, match="all mass red"):
        hard_red_reweight([1.0, 0.0], part([0, 1]))
    with pytest.raises(ValueError):
        part([1, 1])


def test_hard_red_bias_witness():
    r = verify_unbiased(make_reweighter("hard"), [0.9, 0.1])
    np.testing.assert_allclose(r.mean, [0.5, 0.5], atol=1e-15)
    assert r.max_abs_error == pytest.approx(0.4, abs=1e-12) and not r.passed


def test_soft_red_examples():
    p = np.array([0.9, 0.1])
    for g in ([1, 0], [0, 1]):
        np.testing.assert_allclose(soft_red_reweight(p, part(g), 0.0), p, atol=1e-15)
    e = math.e
    np.testing.assert_allclose(soft_red_reweight(p, part([0, 1]), 1.0),
                               [0.9 / (0.9 + 0.1 * e), 0.1 * e / (0.9 + 0.1 * e)], rtol=1e-14)
    assert soft_red_reweight(p, part([0, 1]), 1.0)[0] == pytest.approx(0.7681, abs=1e-4)
    assert soft_red_reweight([0.5, 0.0, 0.5], part([0, 1, 0], 0.4), 2.0)[1] == 0.0


@pytest.mark.parametrize("delta_logit", [0.5, 1.0, 2.0, 5.0])
def test_soft_red_bias_witness(delta_logit):
    rw = make_reweighter("soft", delta_logit)
    r = verify_unbiased(rw, [0.9, 0.1])
    e = math.exp(delta_logit)
    closed = 0.5 * (0.9 * e / (0.9 * e + 0.1) + 0.9 / (0.9 + 0.1 * e))
    assert r.mean[0] == pytest.approx(closed, abs=1e-12)
    assert r.mean[0] < 0.9 and not r.passed


def test_hard_red_identity_when_support_is_green():
    p = normalize([3, 1, 0, 0])
    np.testing.assert_array_equal(hard_red_reweight(p, part([1, 1, 0, 0])), p)


# --- gumbel -----------------------------------------------------------------

def test_gumbel_examples():
    np.testing.assert_array_equal(gumbel_delta_reweight([0.5, 0.5], GumbelVector([3.0, 0.0])), [1, 0])
    np.testing.assert_array_equal(gumbel_delta_reweight([0.0, 1.0], GumbelVector([50.0, -3.0])), [0, 1])
    # exact tie goes to the lower index
    np.testing.assert_array_equal(gumbel_delta_reweight([0.5, 0.5], GumbelVector([1.0, 1.0])), [1, 0])


def test_gumbel_monte_carlo_unbiased():
    p = np.array([0.5, 0.3, 0.15, 0.05])
    r = verify_unbiased(Reweighter("gumbel_delta"), p, "monte_carlo", n_samples=1_000_000, seed=3)
    sigma = np.sqrt(p * (1 - p) / 1_000_000)
    assert np.all(np.abs(r.mean - p) <= 3 * sigma)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_gumbel_and_delta_marginals_agree(n):
    rng = np.random.default_rng(100 + n)
    p = rng.dirichlet(np.ones(n))
    N = 200_000
    g = verify_unbiased(Reweighter("gumbel_delta"), p, "monte_carlo", N, seed=n).mean
    u = rng.random(N)
    d = np.bincount(np.searchsorted(np.cumsum(p), u, side="right").clip(max=n - 1), minlength=n) / N
    se = np.sqrt(p * (1 - p) * 2 / N)
    assert np.all(np.abs(g - d) <= 4 * se)


def test_gumbel_exact_mode_unsupported():
    with pytest.raises(UnsupportedError):
        verify_unbiased(Reweighter("gumbel_delta"), [0.5, 0.5], "exact")


# --- descriptors and properties ----------------------------------------------

def test_reweighter_parameters():
    with pytest.raises(ValueError):
        Reweighter("delta", delta_logit=1.0)
    with pytest.raises(ValueError):
        Reweighter("soft_red", gamma_frac=0.5)
    with pytest.raises(ValueError):
        Reweighter("hard_red")
    with pytest.raises(ValueError):
        Reweighter("nope")
    assert make_reweighter("soft").delta_logit == 1.0
    assert make_reweighter("hard").gamma_frac == 0.5
    assert make_reweighter("gumbel").kind == "gumbel_delta"
    assert Reweighter("gamma").unbiased and not make_reweighter("hard").unbiased


@settings(max_examples=100)
@given(st.integers(2, 7).flatmap(lambda n: st.tuples(simplex(n, n), st.integers(0, 2 ** 32))),
       st.sampled_from(["delta", "gamma", "soft_red", "gumbel_delta"]))
def test_outputs_on_simplex(case, kind):
    p, seed = case
    rw = make_reweighter(kind)
    q = rw.apply(p, rw.random_code(p.size, np.random.default_rng(seed)))
    check_distribution(q, 1e-12)
    assert np.all(q[p == 0] == 0)


@pytest.mark.parametrize("kind", ["delta", "gamma"])
def test_verify_unbiased_monte_carlo_mode(kind):
    p = np.array([0.2, 0.3, 0.5])
    assert verify_unbiased(Reweighter(kind), p, "monte_carlo", 20_000, seed=1).passed


def test_verify_unbiased_examples():
    assert verify_unbiased(Reweighter("delta"), [0.2, 0.3, 0.5]).max_abs_error <= 1e-15
    assert verify_unbiased(Reweighter("gamma"), [0.2, 0.3, 0.5]).max_abs_error <= 1e-12
    assert len(enumerate_codes(Reweighter("gamma"), 3)) == 6
    with pytest.raises(UnsupportedError):
        enumerate_codes(Reweighter("gamma"), 7)
    with pytest.raises(ValueError):
        verify_unbiased(Reweighter("delta"), [1.0], mode="guess")


@pytest.mark.parametrize("w", [
    [0.0, 0.0, 1.4344228535973171, 1.4344228535973171, 1.0, 0.0, 7.890625],
    [0.0, 0.0, 1.0, 1.0, 7.75],
])
def test_gamma_roundoff_keeps_zero_mass(w):
    p = normalize(w)
    for perm in itertools.permutations(range(p.size)):
        q = gamma_reweight(p, Permutation(np.array(perm)))
        assert np.all(q >= 0) and abs(q.sum() - 1) <= 1e-12
        assert np.all(q[p == 0] == 0)
