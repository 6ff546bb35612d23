import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from stickyhdp.exceptions import (
    DecompositionError,
    DegenerateDistributionError,
    InvalidParameterError,
)
from stickyhdp.kernel import (
    NIWParams,
    antoniak_pmf,
    gaussian_logpdf,
    log_stirling_first,
    sample_bernoulli,
    sample_beta,
    sample_binomial,
    sample_categorical_log,
    sample_crt,
    sample_crt_many,
    sample_dirichlet,
    sample_gamma,
    sample_inverse_wishart,
    sample_mvnormal,
    sample_niw,
    sample_stick_breaking,
    studentt_logpdf,
)


def within(sample, expected, k=4):
    sample = np.asarray(sample, dtype=float)
    se = sample.std(axis=0, ddof=1) / np.sqrt(len(sample))
    return np.all(np.abs(sample.mean(axis=0) - expected) <= k * se + 1e-12)


# ----------------------------------------------------------------- Dirichlet
def test_dirichlet_symmetric_mean():
    rng = np.random.default_rng(0)
    draws = np.array([sample_dirichlet([1.0, 1.0], rng) for _ in range(20000)])
    assert within(draws, [0.5, 0.5], k=3)


def test_dirichlet_mean_formula():
    rng = np.random.default_rng(1)
    draws = np.array([sample_dirichlet([2.0, 6.0], rng) for _ in range(20000)])
    assert within(draws, [0.25, 0.75], k=3)


def test_dirichlet_weak_limit_is_sparse():
    rng = np.random.default_rng(2)
    draws = np.array([sample_dirichlet(np.full(20, 1 / 20), rng) for _ in range(500)])
    assert np.allclose(draws.sum(axis=1), 1.0)
    assert np.all(draws >= 0)
    # with shape 1/20 most of the mass sits in a handful of cells
    assert np.median(np.sort(draws, axis=1)[:, -3:].sum(axis=1)) > 0.9


@pytest.mark.parametrize("bad", [[0.0, 1.0], [-1.0, 2.0], [np.nan, 1.0], [np.inf, 1.0]])
def test_dirichlet_rejects_bad_parameters(bad):
    with pytest.raises(InvalidParameterError):
        sample_dirichlet(bad, np.random.default_rng(0))


def test_dirichlet_tiny_shapes_stay_normalised():
    rng = np.random.default_rng(3)
    w = sample_dirichlet(np.full(50, 1e-4), rng)
    assert np.isclose(w.sum(), 1.0) and np.all(np.isfinite(w))


# --------------------------------------------------------------- stick break
def test_stick_breaking_small_concentration_puts_mass_first():
    w = sample_stick_breaking(1e-6, 10, np.random.default_rng(0))
    assert w[0] > 0.999


def test_stick_breaking_remainder_probability():
    rng = np.random.default_rng(1)
    rests = np.array([sample_stick_breaking(1.0, 50, rng)[-1] for _ in range(4000)])
    assert within(rests, 0.5 ** 50, k=4)
    assert np.mean(rests < 0.01) > 0.99


def test_stick_breaking_expected_weights():
    rng = np.random.default_rng(2)
    g = 2.0
    draws = np.array([sample_stick_breaking(g, 5, rng) for _ in range(40000)])
    expected = [g ** (k - 1) / (1 + g) ** k for k in range(1, 6)]
    assert within(draws[:, :5], expected)


@given(st.floats(0.01, 50), st.integers(1, 200), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_stick_breaking_sums_to_one(conc, trunc, seed):
    w = sample_stick_breaking(conc, trunc, np.random.default_rng(seed))
    assert w.shape == (trunc + 1,)
    assert abs(w.sum() - 1.0) < 1e-10


def test_stick_breaking_rejects_zero_truncation():
    with pytest.raises(InvalidParameterError):
        sample_stick_breaking(1.0, 0, np.random.default_rng(0))


# ------------------------------------------------------------ CRT / Antoniak
def test_crt_trivial_counts():
    rng = np.random.default_rng(0)
    assert sample_crt(0, 2.0, rng) == 0
    assert all(sample_crt(1, c, rng) == 1 for c in (0.1, 1.0, 100.0))


def crp_enumeration_pmf(n, conc):
    """Law of the table count by enumerating every new/old seating decision."""
    pmf = np.zeros(n + 1)
    for opens in itertools.product([0, 1], repeat=n - 1):
        p = 1.0
        for i, o in enumerate(opens, start=1):
            q = conc / (conc + i)
            p *= q if o else 1 - q
        pmf[1 + sum(opens)] += p
    return pmf


def test_antoniak_small_cases():
    assert np.allclose(antoniak_pmf(1, 3.0), [0.0, 1.0])
    assert np.allclose(antoniak_pmf(2, 1.0), [0.0, 0.5, 0.5])
    assert np.allclose(antoniak_pmf(3, 1.0), [0.0, 1 / 3, 1 / 2, 1 / 6])


@pytest.mark.parametrize("n,conc", [(4, 0.5), (7, 2.0), (9, 10.0)])
def test_antoniak_matches_enumeration(n, conc):
    assert np.allclose(antoniak_pmf(n, conc), crp_enumeration_pmf(n, conc), atol=1e-12)


def test_stirling_rows():
    assert np.allclose(np.exp(log_stirling_first(4)), [0, 6, 11, 6, 1])
    # s(n, 1) = (n-1)!
    assert np.isclose(log_stirling_first(30)[1], math.lgamma(30))
    with pytest.raises(InvalidParameterError):
        log_stirling_first(61)


@given(st.integers(0, 60), st.floats(0.01, 100))
@settings(max_examples=50, deadline=None)
def test_antoniak_normalised(n, conc):
    assert abs(antoniak_pmf(n, conc).sum() - 1.0) < 1e-10


def test_crt_matches_antoniak_n5():
    rng = np.random.default_rng(4)
    draws = sample_crt_many(np.full(100_000, 5), 2.0, rng)
    emp = np.bincount(draws, minlength=6) / draws.size
    assert 0.5 * np.abs(emp - antoniak_pmf(5, 2.0)).sum() < 0.01


def test_crt_scalar_matches_antoniak():
    rng = np.random.default_rng(5)
    draws = np.array([sample_crt(6, 0.7, rng) for _ in range(20000)])
    emp = np.bincount(draws, minlength=7) / draws.size
    assert 0.5 * np.abs(emp - antoniak_pmf(6, 0.7)).sum() < 0.02


@given(st.lists(st.integers(0, 30), min_size=1, max_size=20), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_crt_many_support(counts, seed):
    counts = np.array(counts)
    m = sample_crt_many(counts, 1.3, np.random.default_rng(seed))
    assert np.all(m <= counts)
    assert np.all((m == 0) == (counts == 0))


# --------------------------------------------------------------- densities
def test_studentt_cauchy_value():
    assert np.isclose(studentt_logpdf([0.0], 1.0, [0.0], [[1.0]]), -np.log(np.pi))


def test_studentt_normal_limit():
    y, loc, var = 0.7, 0.2, 1.7
    t = studentt_logpdf([y], 1e6, [loc], [[var]])
    assert abs(t - stats.norm.logpdf(y, loc, np.sqrt(var))) < 1e-3


def test_studentt_integrates_to_one():
    dof, loc, scale = 3.5, 1.0, 2.0
    sd = np.sqrt(scale)
    total, _ = integrate.quad(lambda x: np.exp(studentt_logpdf([x], dof, [loc], [[scale]])),
                              loc - 50 * sd, loc + 50 * sd, limit=400, points=[loc])
    # the tails beyond 50 scale units carry the remaining mass
    tails = 2 * stats.t.sf(50, dof)
    assert abs(total + tails - 1.0) < 1e-6


def test_studentt_matches_scipy_multivariate():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    S = A @ A.T + np.eye(3)
    loc = rng.standard_normal(3)
    y = rng.standard_normal(3)
    ref = stats.multivariate_t(loc=loc, shape=S, df=4.2).logpdf(y)
    assert np.isclose(studentt_logpdf(y, 4.2, loc, S), ref)


def test_studentt_is_niw_marginal_2d():
    """Student-t predictive equals the NIW-integrated Gaussian (Monte Carlo oracle)."""
    rng = np.random.default_rng(11)
    p = NIWParams(pseudocount=2.0, mean=[0.5, -0.5], dof=6.0, scale=[[2.0, 0.3], [0.3, 1.0]])
    y = np.array([0.9, 0.1])
    dens = []
    for _ in range(40000):
        mu, sig = sample_niw(p, rng)
        dens.append(np.exp(gaussian_logpdf(y, mu, sig)))
    dens = np.array(dens)
    d = 2
    dof = p.dof - d + 1
    scale = p.scale * (p.pseudocount + 1) / (p.pseudocount * dof)
    t = np.exp(studentt_logpdf(y, dof, p.mean, scale))
    assert abs(dens.mean() - t) < 4 * dens.std() / np.sqrt(dens.size)


def test_studentt_rejects_non_spd():
    with pytest.raises(DecompositionError):
        studentt_logpdf([0.0, 0.0], 3.0, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])


# ------------------------------------------------------------- NIW / Wishart
def test_niw_moments():
    rng = np.random.default_rng(6)
    p = NIWParams(pseudocount=0.5, mean=[1.0, -2.0], dof=7.0, scale=[[2.0, 0.5], [0.5, 1.0]])
    draws = [sample_niw(p, rng) for _ in range(40000)]
    mus = np.array([d[0] for d in draws])
    sig = np.array([d[1].ravel() for d in draws])
    assert within(mus, p.mean)
    assert within(sig, (p.scale / (p.dof - 2 - 1)).ravel())


def test_niw_large_pseudocount_collapses_mean():
    rng = np.random.default_rng(7)
    p = NIWParams(pseudocount=1e10, mean=[3.0], dof=4.0, scale=[[1.0]])
    mus = np.array([sample_niw(p, rng)[0] for _ in range(200)])
    assert mus.std() < 1e-3


def test_niw_rejects_asymmetric_scale():
    with pytest.raises(InvalidParameterError):
        NIWParams(pseudocount=1.0, mean=[0, 0], dof=4.0, scale=[[1.0, 0.2], [0.0, 1.0]])


def test_inverse_wishart_second_moment():
    rng = np.random.default_rng(8)
    dof, scale = 9.0, 3.0
    draws = np.array([sample_inverse_wishart(dof, [[scale]], rng)[0, 0] for _ in range(60000)])
    # scalar case is inverse-gamma(dof/2, scale/2)
    ref = stats.invgamma(dof / 2, scale=scale / 2)
    assert within(draws, ref.mean())
    assert within(draws ** 2, ref.moment(2))


# -------------------------------------------------------------- categorical
def test_categorical_log_cases():
    rng = np.random.default_rng(9)
    assert all(sample_categorical_log([0.0, -np.inf], rng) == 0 for _ in range(100))
    draws = np.array([sample_categorical_log([2.0, 2.0], rng) for _ in range(20000)])
    assert within(draws, 0.5, k=3)
    draws = np.array([sample_categorical_log(np.log([1.0, 3.0]), rng) for _ in range(20000)])
    assert within(draws, 0.75, k=3)


def test_categorical_log_all_zero():
    with pytest.raises(DegenerateDistributionError):
        sample_categorical_log([-np.inf, -np.inf], np.random.default_rng(0))


# ------------------------------------------------------------ scalar laws
def test_scalar_laws_moments():
    rng = np.random.default_rng(10)
    n = 40000
    b = np.array([sample_beta(2.0, 5.0, rng) for _ in range(n)])
    assert within(b, 2 / 7) and within(b ** 2, stats.beta(2, 5).moment(2))
    g = np.array([sample_gamma(3.0, 2.0, rng) for _ in range(n)])
    assert within(g, 1.5) and within(g ** 2, stats.gamma(3, scale=0.5).moment(2))
    k = np.array([sample_binomial(12, 0.3, rng) for _ in range(n)])
    assert within(k, 3.6) and within(k ** 2, 12 * 0.3 * 0.7 + 3.6 ** 2)
    x = np.array([sample_bernoulli(0.2, rng) for _ in range(n)])
    assert within(x, 0.2)
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    v = np.array([sample_mvnormal([1.0, 0.0], cov, rng) for _ in range(n)])
    assert within(v, [1.0, 0.0])
    assert within(v[:, 0] * v[:, 1], 0.6)


def test_determinism():
    a = sample_dirichlet(np.ones(5), np.random.default_rng(42))
    b = sample_dirichlet(np.ones(5), np.random.default_rng(42))
    assert np.array_equal(a, b)
    p = NIWParams(pseudocount=1.0, mean=[0.0], dof=3.0, scale=[[1.0]])
    x = sample_niw(p, np.random.default_rng(3))
    y = sample_niw(p, np.random.default_rng(3))
    assert np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1])


def test_log_beta_matches_beta_and_survives_tiny_shapes():
    from scipy import stats

    from stickyhdp.kernel import sample_log_beta

    rng = np.random.default_rng(0)
    draws = np.exp(sample_log_beta(np.full(20000, 2.5), 4.0, rng))
    assert stats.kstest(draws, stats.beta(2.5, 4.0).cdf).pvalue > 0.01
    tiny = sample_log_beta(np.full(1000, 1e-4), 500.0, rng)
    assert np.all(np.isfinite(tiny)) and np.all(tiny < 0)
