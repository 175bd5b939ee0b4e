import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from tdtn.stat_fit import (
    AggregateDistribution,
    Classification,
    GammaFit,
    aggregate_samples,
    aggregate_tail,
    classify_pair,
    critical_value,
    csvm_statistic,
    fit_exponential,
    fit_gamma_rates,
    fit_pareto,
    fit_powerlaw_points,
    fit_powerlaw_tail,
    pareto_tail,
    summarize,
    classify_table,
)
from tdtn.trace_core import InterContactTable


def uniform_cdf(x):
    return np.clip(x, 0, 1)


def cvm_by_quadrature(samples, cdf_inv_domain=(0.0, 1.0)):
    """N * integral of (F_N(u) - u)^2 du over [0, 1], samples already on the u scale."""
    u = np.sort(np.asarray(samples, dtype=float))
    n = u.size
    knots = np.concatenate(([0.0], u, [1.0]))
    total = 0.0
    for k in range(n + 1):
        lo, hi = knots[k], knots[k + 1]
        if hi > lo:
            val, _ = integrate.quad(lambda t, c=k / n: (c - t) ** 2, lo, hi, epsabs=1e-14, epsrel=1e-12)
            total += val
    return n * total


# --- fit_exponential -----------------------------------------------------------

def test_exponential_rate_is_reciprocal_mean():
    assert fit_exponential([3600.0, 10800.0]).rate == pytest.approx(1 / 7200)
    assert fit_exponential([100.0]).rate == 0.01
    assert fit_exponential([1, 2, 3]).rate == 0.5


def test_exponential_errors():
    with pytest.raises(ValueError):
        fit_exponential([])
    with pytest.raises(ValueError):
        fit_exponential([1.0, 0.0])


# --- csvm_statistic ---------------------------------------------------------------

def test_single_sample_at_median():
    assert csvm_statistic([math.log(2)], lambda x: 1 - np.exp(-x)) == pytest.approx(1 / 12)


@pytest.mark.parametrize("n", [1, 3, 10, 57])
def test_samples_at_quantiles(n):
    u = (2 * np.arange(1, n + 1) - 1) / (2 * n)
    x = -np.log1p(-u) / 0.3
    assert csvm_statistic(x, lambda t: 1 - np.exp(-0.3 * t)) == pytest.approx(1 / (12 * n), abs=1e-15)


def test_five_uniform_points():
    pts = [0.1, 0.3, 0.5, 0.7, 0.9]
    assert csvm_statistic(pts, uniform_cdf) == pytest.approx(1 / 60, abs=1e-15)
    assert cvm_by_quadrature(pts) == pytest.approx(1 / 60, rel=1e-9)


def test_matches_quadrature_on_random_samples():
    rng = np.random.default_rng(3)
    for _ in range(20):
        u = rng.random(rng.integers(1, 40))
        assert csvm_statistic(u, uniform_cdf) == pytest.approx(cvm_by_quadrature(u), rel=1e-8)


def test_matches_scipy_statistic():
    from scipy import stats

    x = np.random.default_rng(4).exponential(2.0, 300)
    ours = csvm_statistic(x, lambda t: 1 - np.exp(-t / 2.0))
    assert ours == pytest.approx(stats.cramervonmises(x, "expon", args=(0, 2.0)).statistic, rel=1e-10)


def test_non_monotone_cdf_rejected():
    with pytest.raises(ValueError):
        csvm_statistic([1.0, 2.0], lambda x: np.array([0.8, 0.2]))
    with pytest.raises(ValueError):
        csvm_statistic([1.0], lambda x: np.array([1.5]))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
def test_statistic_lower_bound(u):
    assert csvm_statistic(u, uniform_cdf) >= 1 / (12 * len(u)) - 1e-15


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-3, 50.0), min_size=1, max_size=50), st.floats(0.01, 5.0))
def test_distribution_free(x, lam):
    def cdf(t):
        return -np.expm1(-lam * np.asarray(t))
    direct = csvm_statistic(x, cdf)
    via_uniform = csvm_statistic(cdf(np.asarray(x)), uniform_cdf)
    assert direct == pytest.approx(via_uniform, rel=1e-12, abs=1e-15)


def test_critical_values():
    assert critical_value(0.05) == pytest.approx(0.461, abs=5e-4)
    assert critical_value(0.01) == pytest.approx(0.743, abs=5e-4)
    assert critical_value(0.05, "estimated") == 0.224
    with pytest.raises(ValueError):
        critical_value(0.5, "estimated")


def test_asymptotic_distribution_matches_scipy():
    from scipy.stats._hypotests import _cdf_cvm_inf
    from tdtn.stat_fit import cvm_asymptotic_cdf

    for x in (0.05, 0.2, 0.461, 1.0, 2.0):
        assert cvm_asymptotic_cdf(x) == pytest.approx(float(_cdf_cvm_inf(x)), abs=1e-10)


# --- classify_pair ---------------------------------------------------------------

def test_exponential_draws_classified_exponential():
    x = np.random.default_rng(11).exponential(1e4, 500)
    v = classify_pair(x)
    assert v.classification == Classification.EXPONENTIAL
    assert v.rate == pytest.approx(1 / x.mean())


def test_pareto_draws_classified_power_law():
    x = 1000.0 * np.random.default_rng(12).pareto(1.2, 500)
    x = x[x > 0]
    v = classify_pair(x)
    assert v.classification == Classification.POWER_LAW
    assert v.powerlaw.alpha == pytest.approx(1.2, rel=0.2)


def test_insufficient_data():
    v = classify_pair(np.ones(10), min_contacts=20)
    assert v.classification == Classification.INSUFFICIENT
    assert classify_pair(np.full(30, 1e6), max_mean=1e5).classification == Classification.INSUFFICIENT


def test_explicit_critical_value_governs_both_hypotheses():
    x = np.random.default_rng(13).exponential(1.0, 200)
    assert classify_pair(x, 10.0).classification == Classification.BOTH
    assert classify_pair(x, 1e-9).classification == Classification.NEITHER


def test_verdict_consistent_with_statistics():
    rng = np.random.default_rng(14)
    crit = critical_value(0.05)
    for k in range(30):
        x = rng.exponential(1.0, 100) if k % 2 else rng.pareto(1.5, 100) + 1e-3
        v = classify_pair(x, crit)
        exp_ok, pl_ok = v.omega2_exponential <= crit, v.omega2_powerlaw <= crit
        expected = {(True, True): "both", (True, False): "exponential",
                    (False, True): "power-law", (False, False): "neither"}[(exp_ok, pl_ok)]
        assert v.classification.value == expected


def test_pareto_fit_recovers_parameters():
    x = 500.0 * np.random.default_rng(15).pareto(1.5, 20000)
    fit = fit_pareto(x[x > 0], max_alpha=10.0)
    assert fit.alpha == pytest.approx(1.5, rel=0.05)
    assert fit.b == pytest.approx(500.0, rel=0.1)


def test_acceptance_rate_near_nominal():
    rng = np.random.default_rng(16)
    acc = sum(classify_pair(rng.exponential(3.0, 200), min_contacts=0).classification
              in (Classification.EXPONENTIAL, Classification.BOTH) for _ in range(500))
    assert 0.90 <= acc / 500 <= 1.0


# --- gamma fit --------------------------------------------------------------------

def test_gamma_recovery_reference_parameters():
    lam = np.random.default_rng(21).gamma(2.26, 1 / 113766.9, 10_000)
    fit = fit_gamma_rates(lam)
    assert fit.alpha == pytest.approx(2.26, rel=0.10)
    assert fit.b == pytest.approx(113766.9, rel=0.10)


def test_gamma_two_point():
    fit = fit_gamma_rates([1.0, 3.0])
    assert (fit.alpha, fit.b) == (pytest.approx(2.0), pytest.approx(1.0))


def test_gamma_zero_variance():
    with pytest.raises(ValueError, match="variance"):
        fit_gamma_rates([1.0] * 5)


def test_gamma_consistency_improves_with_size():
    def rel_err(size, seed):
        fit = fit_gamma_rates(np.random.default_rng(seed).gamma(2.26, 1 / 113766.9, size))
        return max(abs(fit.alpha / 2.26 - 1), abs(fit.b / 113766.9 - 1))
    small = np.mean([rel_err(1000, s) for s in range(20)])
    large = np.mean([rel_err(100_000, s) for s in range(20)])
    assert large < small


# --- aggregation --------------------------------------------------------------------

def test_aggregate_two_pairs():
    table = InterContactTable(["a", "b", "c"], {(0, 1): [1.0, 2.0], (0, 2): [3.0]})
    dist = aggregate_tail(table, [(0, 1), (0, 2)])
    assert list(dist.values) == [1, 2, 3]
    assert dist(1.0) == pytest.approx(2 / 3)
    assert dist(0.5) == 1.0 and dist(3.0) == 0.0


def test_aggregate_pair_weighting():
    table = InterContactTable(["a", "b", "c"], {(0, 1): [1.0, 2.0], (0, 2): [3.0]})
    dist = aggregate_tail(table, weighting="pair")
    assert dist(1.0) == pytest.approx(0.75)


def test_aggregate_single_pair_is_its_empirical_law():
    table = InterContactTable(["a", "b"], {(0, 1): [5.0, 1.0, 3.0, 3.0]})
    dist = aggregate_tail(table)
    assert list(dist.values) == [1, 3, 5]
    assert list(dist.ccdf) == [0.75, 0.25, 0.0]


def test_aggregate_errors():
    table = InterContactTable(["a", "b"], {(0, 1): []})
    with pytest.raises(ValueError):
        aggregate_tail(table, [])
    with pytest.raises(ValueError):
        aggregate_tail(table)


def test_ccdf_invariants_enforced():
    with pytest.raises(ValueError):
        AggregateDistribution(np.array([1.0, 2.0]), np.array([0.2, 0.5]))


# --- Pareto tail ----------------------------------------------------------------------

def laplace_of_gamma(alpha, b, t):
    """P(Theta > t) by integrating exp(-lam t) against the gamma density, with x = lam * b."""
    def f(x):
        return math.exp(-x * t / b + (alpha - 1) * math.log(x) - x - special.gammaln(alpha))
    val, _ = integrate.quad(f, 0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def test_pareto_tail_values():
    assert pareto_tail(2.0, 3.0, 0.0) == 1.0
    assert pareto_tail(1.0, 1.0, 1.0) == 0.5
    assert pareto_tail(2.26, 113766.9, 113766.9) == pytest.approx(2 ** -2.26, rel=1e-12)
    assert pareto_tail(2.26, 113766.9, 113766.9) == pytest.approx(0.2088, abs=1e-4)


@pytest.mark.parametrize("t", [0.0, 1e3, 5e4, 113766.9, 1e6])
def test_pareto_tail_is_laplace_transform_of_gamma(t):
    assert pareto_tail(2.26, 113766.9, t) == pytest.approx(laplace_of_gamma(2.26, 113766.9, t), rel=1e-7)


def test_gamma_mixture_of_exponentials_is_pareto():
    rng = np.random.default_rng(31)
    alpha, b = 2.26, 113766.9
    lam = rng.gamma(alpha, 1 / b, 100_000)
    dist = aggregate_samples(rng.exponential(1 / lam))
    assert np.abs(dist.ccdf - pareto_tail(alpha, b, dist.values)).max() < 0.01


# --- power-law fit ----------------------------------------------------------------------

def test_powerlaw_exact_recovery():
    t = np.logspace(4, 7, 50)
    dist = AggregateDistribution(t, 3.45 * t ** -0.16)
    fit = fit_powerlaw_tail(dist)
    assert fit.c == pytest.approx(3.45, abs=1e-6)
    assert fit.delta == pytest.approx(-0.16, abs=1e-6)


def test_powerlaw_constant_ccdf():
    t = np.arange(1.0, 11.0)
    fit = fit_powerlaw_tail(AggregateDistribution(t, np.ones(10)), lower_fraction=0, upper_fraction=0)
    assert fit.delta == pytest.approx(0.0, abs=1e-12)
    assert fit.c == pytest.approx(1.0)


def test_powerlaw_slope_of_pareto_far_tail():
    alpha, b = 2.26, 113766.9
    t = np.logspace(math.log10(100 * b), math.log10(1e4 * b), 40)
    y = pareto_tail(alpha, b, t)
    # independent: local slope d log S / d log t = -alpha t / (t + b), averaged over the range
    expected = np.mean(-alpha * t / (t + b))
    fit = fit_powerlaw_points(t, y)
    assert fit.delta == pytest.approx(expected, rel=2e-3)
    assert fit.delta == pytest.approx(-alpha, rel=0.01)


def test_powerlaw_needs_three_points():
    with pytest.raises(ValueError):
        fit_powerlaw_points([1.0, 2.0], [0.5, 0.25])


def test_summary_record():
    rng = np.random.default_rng(41)
    lam = rng.gamma(2.26, 1.0, 40)
    samples = {(0, k): rng.exponential(1 / l, 60) for k, l in enumerate(lam, start=1)}
    table = InterContactTable([str(i) for i in range(41)], samples)
    verdicts = classify_table(table)
    summary = summarize(table, verdicts).as_dict()
    assert set(summary) >= {"alpha", "b", "c", "delta", "counts", "percentages", "powerlaw_range_seconds"}
    assert sum(summary["counts"].values()) == 40
    assert summary["alpha"] > 0 and summary["delta"] < 0


def test_gamma_fit_cdf():
    g = GammaFit(2.0, 1.0)
    assert g.cdf(1.0) == pytest.approx(1 - 2 * math.exp(-1))
