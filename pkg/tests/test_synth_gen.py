import math

import numpy as np
import pytest

from tdtn.rate_model import RateMatrix
from tdtn.stat_fit import aggregate_tail, classify_table, fit_exponential, pareto_tail
from tdtn.synth_gen import GammaRates, SynthSpec, generate, generate_trace, sample_rates
from tdtn.trace_core import eligible_pairs, extract_intercontacts


def pair_counts(trace):
    n = trace.n
    counts = np.zeros((n, n), dtype=int)
    np.add.at(counts, (trace.a, trace.b), 1)
    return counts[np.triu_indices(n, 1)]


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(3, 1.0, horizon=0)
    with pytest.raises(ValueError):
        GammaRates(-1.0, 1.0)
    with pytest.raises(ValueError):
        SynthSpec(3, RateMatrix(np.zeros((2, 2))), horizon=1)


def test_from_mapping():
    spec = SynthSpec.from_mapping({"n": "4", "horizon": "100", "seed": "9", "alpha": "2", "b": "5"})
    assert spec.rate_source == GammaRates(2.0, 5.0) and spec.seed == 9
    with pytest.raises(ValueError):
        SynthSpec.from_mapping({"n": "4", "horizon": "100", "colour": "red"})


def test_constant_rates():
    m = sample_rates(SynthSpec(5, 0.01, horizon=1.0))
    off = m.rates[~np.eye(5, dtype=bool)]
    assert np.all(off == 0.01)


def test_two_nodes():
    m = sample_rates(SynthSpec(2, GammaRates(), horizon=1.0, seed=4))
    assert m.rates[0, 1] == m.rates[1, 0] > 0


def test_gamma_mean():
    m = sample_rates(SynthSpec(200, GammaRates(2.26, 113766.9), horizon=1.0, seed=1))
    lam = m.rates[np.triu_indices(200, 1)]
    assert lam.mean() == pytest.approx(2.26 / 113766.9, rel=0.05)
    assert 2.26 / 113766.9 == pytest.approx(1.986e-5, rel=1e-3)


def test_pair_rate_independent_of_n():
    small = sample_rates(SynthSpec(4, GammaRates(), horizon=1.0, seed=3))
    big = sample_rates(SynthSpec(9, GammaRates(), horizon=1.0, seed=3))
    assert np.array_equal(small.rates, big.rates[:4, :4])


def test_zero_rate_pair_has_no_events():
    m = RateMatrix.from_pairs(3, {(0, 1): 1e-2})
    tr = generate_trace(m, 1e4, seed=1)
    assert set(zip(tr.a.tolist(), tr.b.tolist())) == {(0, 1)}


def test_poisson_count():
    m = RateMatrix.from_pairs(2, {(0, 1): 1e-3})
    tr = generate_trace(m, 1e6, seed=5)
    assert abs(len(tr.a) - 1000) <= 3 * math.sqrt(1000)
    assert tr.start.min() >= 0 and tr.start.max() <= 1e6


def test_poisson_counts_across_seeds():
    m = RateMatrix.from_pairs(2, {(0, 1): 1e-3})
    counts = np.array([len(generate_trace(m, 1e5, seed=s).a) for s in range(400)])
    # mean and variance of a Poisson(100) count
    assert counts.mean() == pytest.approx(100, abs=3 * math.sqrt(100 / 400))
    assert counts.var(ddof=1) == pytest.approx(100, rel=0.2)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_round_trip_rate(seed):
    lam = 2e-4
    m = RateMatrix.from_pairs(2, {(0, 1): lam})
    tr = generate_trace(m, 5e6, seed=seed)
    x = extract_intercontacts(tr).samples((0, 1))
    est = fit_exponential(x).rate
    assert abs(est - lam) <= 3 * lam / math.sqrt(x.size)


def test_determinism():
    spec = SynthSpec(12, GammaRates(2.0, 1e3), horizon=1e5, seed=42)
    m1, t1 = generate(spec)
    m2, t2 = generate(spec)
    assert m1 == m2 and t1 == t2
    for col in ("a", "b", "start", "end"):
        assert getattr(t1, col).tobytes() == getattr(t2, col).tobytes()
    _, t3 = generate(SynthSpec(12, GammaRates(2.0, 1e3), horizon=1e5, seed=43))
    assert not t1 == t3


def test_independence_across_pairs_and_seeds():
    n = 60
    m = sample_rates(SynthSpec(n, 1e-3, horizon=1.0))
    within, across = [], []
    prev = None
    for seed in range(20):
        c = pair_counts(generate_trace(m, 1e5, seed=seed)).astype(float)
        z = (c - 100.0) / 10.0
        within.append(z[:-1] * z[1:])
        if prev is not None:
            across.append(prev * z)
        prev = z
    rho_within = np.concatenate(within).mean()
    rho_across = np.concatenate(across).mean()
    assert abs(rho_within) < 0.05
    assert abs(rho_across) < 0.05


def test_contact_duration_and_merging():
    m = RateMatrix.from_pairs(2, {(0, 1): 1e-2})
    tr = generate_trace(m, 1e5, seed=2, contact_duration=150.0)
    assert (tr.end >= tr.start).all() and tr.end.max() <= 1e5
    # merged intervals of one pair never touch
    assert (tr.start[1:] > tr.end[:-1]).all()
    assert ((tr.end - tr.start) >= 150.0 - 1e-9)[:-1].all()


def test_generated_trace_is_canonical():
    _, tr = generate(SynthSpec(8, GammaRates(2.0, 1e3), horizon=2e4, seed=7))
    assert (tr.a < tr.b).all()
    keys = list(zip(tr.start.tolist(), tr.a.tolist(), tr.b.tolist()))
    assert keys == sorted(keys)
    assert tr.horizon == (0.0, 2e4)


@pytest.mark.slow
def test_closed_loop_pareto_tail():
    alpha, b = 2.26, 113766.9
    median_rate = 1.70e-5  # median of Gamma(2.26, b) is about 1.94 / b
    spec = SynthSpec(200, GammaRates(alpha, b), horizon=150 / median_rate, seed=1)
    _, tr = generate(spec)
    table = extract_intercontacts(tr)
    verdicts = classify_table(table, eligible_pairs(table))
    dist = aggregate_tail(table, list(verdicts), weighting="pair")
    assert np.abs(dist.ccdf - pareto_tail(alpha, b, dist.values)).max() < 0.02
