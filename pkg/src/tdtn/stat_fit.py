"""Per-pair distribution fitting and the gamma/Pareto aggregation law.

Goodness of fit uses the Cramér-von Mises statistic

    omega2 = 1/(12 N) + sum_k (F(x_(k)) - (2k - 1)/(2N))**2

Two sets of critical values are available.  ``parameters="known"`` uses
the asymptotic distribution of omega2 for a fully specified hypothesis
(0.461 at the 5% level).  ``parameters="estimated"`` applies Stephens'
correction for an exponential whose scale is estimated from the same
sample (statistic scaled by ``1 + 0.16/N``, 0.224 at 5%); this is what
:func:`classify_pair` uses for the exponential hypothesis, because the
rate is always fitted from the pair's own samples.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import optimize, special

from .trace_core import MIN_CONTACTS, InterContactTable

DEFAULT_SIGNIFICANCE = 0.05
DEFAULT_POWERLAW_MAX_ALPHA = 2.0

# Stephens (1974), exponential with unknown scale, modified statistic
# omega2 * (1 + 0.16/N): upper-tail percentage points.
_STEPHENS_EXPONENTIAL = {
    0.25: 0.116,
    0.15: 0.149,
    0.10: 0.177,
    0.05: 0.224,
    0.025: 0.273,
    0.01: 0.337,
}


class Classification(str, enum.Enum):
    EXPONENTIAL = "exponential"
    POWER_LAW = "power-law"
    BOTH = "both"
    NEITHER = "neither"
    INSUFFICIENT = "insufficient-data"

    def __str__(self):
        return self.value

    @property
    def accepts_exponential(self) -> bool:
        return self in (Classification.EXPONENTIAL, Classification.BOTH)


@dataclass(frozen=True)
class ExponentialFit:
    rate: float
    n: int

    def cdf(self, x):
        return -np.expm1(-self.rate * np.asarray(x, dtype=float))

    @property
    def mean(self) -> float:
        return 1.0 / self.rate


@dataclass(frozen=True)
class ParetoFit:
    """Shifted (Lomax) Pareto ``1 - (b / (x - cutoff + b))**alpha`` for ``x >= cutoff``."""

    alpha: float
    b: float
    cutoff: float = 0.0
    n: int = 0

    def cdf(self, x):
        x = np.asarray(x, dtype=float) - self.cutoff
        return -np.expm1(-self.alpha * np.log1p(np.maximum(x, 0.0) / self.b))


@dataclass(frozen=True)
class PowerLawFit:
    c: float
    delta: float
    t_min: float = math.nan
    t_max: float = math.nan
    n_points: int = 0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("power-law scale must be positive")

    def __call__(self, t):
        return self.c * np.asarray(t, dtype=float) ** self.delta


@dataclass(frozen=True)
class GammaFit:
    """Gamma law of the rates, density ``lam**(alpha-1) b**alpha exp(-b lam) / Gamma(alpha)``."""

    alpha: float
    b: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.b > 0):
            raise ValueError("gamma parameters must be positive")

    @property
    def mean(self) -> float:
        return self.alpha / self.b

    def cdf(self, lam):
        return special.gammainc(self.alpha, self.b * np.asarray(lam, dtype=float))

    def sample(self, size, rng: np.random.Generator):
        return rng.gamma(self.alpha, 1.0 / self.b, size)


@dataclass(frozen=True)
class FitVerdict:
    pair: tuple[int, int] | None
    n: int
    rate: float
    omega2_exponential: float
    omega2_powerlaw: float
    classification: Classification
    powerlaw: ParetoFit | None = None


@dataclass(frozen=True)
class AggregateDistribution:
    """Empirical tail of the aggregated inter-contact time.

    ``values`` are the distinct pooled sample values (ascending) and
    ``ccdf[k]`` is the weighted fraction of samples strictly greater than
    ``values[k]``.
    """

    values: np.ndarray
    ccdf: np.ndarray
    n_samples: int = 0
    n_pairs: int = 0
    weighting: str = "sample"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.ccdf, dtype=float)
        if v.shape != c.shape or v.ndim != 1:
            raise ValueError("values and ccdf must be 1-d arrays of equal length")
        if v.size > 1 and not (np.diff(v) > 0).all():
            raise ValueError("values must be strictly increasing")
        if v.size > 1 and (np.diff(c) > 1e-12).any():
            raise ValueError("ccdf must be non-increasing")
        if v.size and (c.min() < -1e-12 or c.max() > 1 + 1e-12):
            raise ValueError("ccdf outside [0, 1]")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "ccdf", np.clip(c, 0.0, 1.0))

    def __call__(self, t):
        """Weighted fraction of samples strictly greater than ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.values, t, side="right") - 1
        head = np.concatenate(([1.0], self.ccdf))
        return head[idx + 1]

    def mass_below(self) -> np.ndarray:
        """Weighted fraction of samples strictly below each value."""
        return 1.0 - np.concatenate(([1.0], self.ccdf[:-1]))


def fit_exponential(samples) -> ExponentialFit:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("cannot fit an exponential to an empty sample")
    if (x <= 0).any():
        raise ValueError("inter-contact samples must be strictly positive")
    return ExponentialFit(rate=1.0 / float(x.mean()), n=int(x.size))


def csvm_statistic(samples, cdf: Callable) -> float:
    """Cramér-von Mises omega2 of ``samples`` against hypothesis ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float), kind="stable")
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    z = np.asarray(cdf(x), dtype=float)
    if z.shape != x.shape or not np.isfinite(z).all():
        raise ValueError("hypothesis CDF returned invalid values")
    if z.min() < 0 or z.max() > 1 or (np.diff(z) < 0).any():
        raise ValueError("hypothesis CDF is not a monotone map into [0, 1]")
    k = np.arange(1, n + 1)
    return float(1.0 / (12.0 * n) + np.sum((z - (2 * k - 1) / (2.0 * n)) ** 2))


def cvm_asymptotic_cdf(x: float) -> float:
    """Limiting CDF of omega2 (Anderson & Darling series)."""
    if x <= 0:
        return 0.0
    total = 0.0
    for k in range(64):
        y = 4 * k + 1
        q = y * y / (16.0 * x)
        if q > 700:
            break
        u = math.exp(special.gammaln(k + 0.5) - special.gammaln(k + 1)) / (math.pi ** 1.5 * math.sqrt(x))
        total += u * math.sqrt(y) * math.exp(-q) * special.kv(0.25, q)
    return min(total, 1.0)


@lru_cache(maxsize=64)
def critical_value(significance: float = DEFAULT_SIGNIFICANCE, parameters: str = "known") -> float:
    """Upper-tail critical value of omega2 at ``significance``.

    ``known``: asymptotic, any significance in (0, 1).  ``estimated``:
    Stephens' exponential table (to be compared with ``omega2 * (1 + 0.16/N)``),
    log-linearly interpolated between tabulated levels 0.01 .. 0.25.
    """
    if not 0 < significance < 1:
        raise ValueError("significance must lie in (0, 1)")
    if parameters == "known":
        return float(optimize.brentq(lambda c: cvm_asymptotic_cdf(c) - (1 - significance), 1e-3, 20.0,
                                     xtol=1e-10))
    if parameters != "estimated":
        raise ValueError(f"unknown parameters mode {parameters!r}")
    levels = sorted(_STEPHENS_EXPONENTIAL)
    if not levels[0] <= significance <= levels[-1]:
        raise ValueError(f"estimated-parameter table covers significance {levels[0]}..{levels[-1]}")
    logs = np.log(levels)
    return float(np.interp(math.log(significance), logs, [_STEPHENS_EXPONENTIAL[s] for s in levels]))


def fit_pareto(samples, cutoff: float = 0.0, max_alpha: float = DEFAULT_POWERLAW_MAX_ALPHA) -> ParetoFit:
    """Maximum-likelihood shifted Pareto with shape capped at ``max_alpha``.

    For a fixed scale the shape MLE is ``N / sum(log1p(x/b))``; the profile
    likelihood in ``log b`` is then maximised numerically.  The cap keeps the
    family heavy-tailed: uncapped, it converges to the exponential.
    """
    x = np.asarray(samples, dtype=float)
    x = x[x >= cutoff] - cutoff
    n = x.size
    if n < 2 or not (x > 0).any():
        raise ValueError("need at least two samples above the cutoff")
    scale = float(np.mean(x))

    def shape(b):
        return min(n / np.sum(np.log1p(x / b)), max_alpha)

    def nll(log_b):
        b = math.exp(log_b)
        s = float(np.sum(np.log1p(x / b)))
        a = min(n / s, max_alpha)
        return -(n * math.log(a) - n * math.log(b) - (a + 1) * s)

    lo, hi = math.log(scale) - 25, math.log(scale) + 25
    grid = np.linspace(lo, hi, 51)
    best = grid[int(np.argmin([nll(g) for g in grid]))]
    res = optimize.minimize_scalar(nll, bounds=(max(lo, best - 1.0), min(hi, best + 1.0)),
                                   method="bounded", options={"xatol": 1e-9})
    b = math.exp(res.x)
    return ParetoFit(alpha=float(shape(b)), b=b, cutoff=cutoff, n=n)


def classify_pair(samples, critical_value_override: float | None = None, *,
                  pair: tuple[int, int] | None = None,
                  significance: float = DEFAULT_SIGNIFICANCE,
                  min_contacts: int = MIN_CONTACTS,
                  max_mean: float | None = None,
                  parameters: str = "estimated",
                  powerlaw_cutoff: float = 0.0,
                  powerlaw_max_alpha: float = DEFAULT_POWERLAW_MAX_ALPHA) -> FitVerdict:
    """Test one pair's samples against exponential and power-law hypotheses.

    A pair needs more than ``min_contacts`` contacts (``len(samples) + 1``)
    and, if given, a mean below ``max_mean``; otherwise the verdict is
    ``insufficient-data``.  An explicit ``critical_value_override`` is
    compared with the raw statistic of both hypotheses.
    """
    x = np.asarray(samples, dtype=float)
    n = int(x.size)
    if n == 0 or n + 1 <= min_contacts or (max_mean is not None and not x.mean() < max_mean):
        rate = 1.0 / float(x.mean()) if n else math.nan
        return FitVerdict(pair, n, rate, math.nan, math.nan, Classification.INSUFFICIENT)

    expo = fit_exponential(x)
    w_exp = csvm_statistic(x, expo.cdf)
    try:
        pl = fit_pareto(x, cutoff=powerlaw_cutoff, max_alpha=powerlaw_max_alpha)
        w_pl = csvm_statistic(x[x >= powerlaw_cutoff], pl.cdf)
    except ValueError:
        pl, w_pl = None, math.inf

    if critical_value_override is not None:
        exp_ok = w_exp <= critical_value_override
        pl_ok = w_pl <= critical_value_override
    else:
        if parameters == "estimated":
            exp_ok = w_exp * (1 + 0.16 / n) <= critical_value(significance, "estimated")
        else:
            exp_ok = w_exp <= critical_value(significance, "known")
        pl_ok = w_pl <= critical_value(significance, "known")

    if exp_ok and pl_ok:
        cls = Classification.BOTH
    elif exp_ok:
        cls = Classification.EXPONENTIAL
    elif pl_ok:
        cls = Classification.POWER_LAW
    else:
        cls = Classification.NEITHER
    return FitVerdict(pair, n, expo.rate, w_exp, w_pl, cls, pl)


def classify_table(table: InterContactTable, pairs: Iterable[tuple[int, int]] | None = None,
                   **kwargs) -> dict[tuple[int, int], FitVerdict]:
    """Classify each pair; pairs default to the whole table."""
    pairs = sorted(table) if pairs is None else sorted(pairs)
    return {p: classify_pair(table.samples(p), pair=p, **kwargs) for p in pairs}


def fit_gamma_rates(lambdas) -> GammaFit:
    """Method-of-moments gamma fit using the unbiased (N-1) sample variance."""
    lam = np.asarray(lambdas, dtype=float)
    if lam.size < 2:
        raise ValueError("need at least two rates")
    if (lam <= 0).any():
        raise ValueError("rates must be strictly positive")
    var = float(lam.var(ddof=1))
    if var == 0:
        raise ValueError("zero variance: all rates equal, gamma fit undefined")
    mean = float(lam.mean())
    return GammaFit(alpha=mean * mean / var, b=mean / var)


def aggregate_tail(table: InterContactTable, pairs: Iterable[tuple[int, int]] | None = None,
                   weighting: str = "sample") -> AggregateDistribution:
    """Pool the inter-contact samples of ``pairs`` into an empirical CCDF.

    ``weighting="sample"`` gives every sample equal mass.  Pairs with more
    contacts then carry proportionally more weight, so for exponential pairs
    the pooled law is size-biased by the rate.  ``weighting="pair"`` gives
    each pair equal total mass (the mixture over pairs).
    """
    if weighting not in ("sample", "pair"):
        raise ValueError(f"unknown weighting {weighting!r}")
    pairs = sorted(table) if pairs is None else sorted(pairs)
    if not pairs:
        raise ValueError("no pairs to aggregate")
    chunks = [table.samples(p) for p in pairs]
    chunks = [c for c in chunks if c.size]
    if not chunks:
        raise ValueError("no samples in the selected pairs")
    x = np.concatenate(chunks)
    if weighting == "sample":
        w = np.ones(x.size)
    else:
        w = np.concatenate([np.full(c.size, 1.0 / c.size) for c in chunks])
    return _weighted_tail(x, w, n_pairs=len(chunks), weighting=weighting)


def _weighted_tail(x, w, n_pairs=0, weighting="sample") -> AggregateDistribution:
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order] / w.sum()
    values, first = np.unique(x, return_index=True)
    cum = np.cumsum(w)
    last = np.concatenate((first[1:], [x.size])) - 1
    ccdf = 1.0 - cum[last]
    ccdf[-1] = 0.0
    return AggregateDistribution(values, ccdf, n_samples=int(x.size), n_pairs=n_pairs,
                                 weighting=weighting)


def aggregate_samples(samples) -> AggregateDistribution:
    """Empirical CCDF of a flat sample (every value equal weight)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    return _weighted_tail(x, np.ones(x.size))


def pareto_tail(alpha: float, b: float, t):
    """Aggregate survival ``(b / (t + b))**alpha`` for gamma(alpha, b) rates."""
    if not (alpha > 0 and b > 0):
        raise ValueError("alpha and b must be positive")
    t = np.asarray(t, dtype=float)
    if (t < 0).any():
        raise ValueError("t must be non-negative")
    out = np.exp(-alpha * np.log1p(t / b))
    return float(out) if out.ndim == 0 else out


def fit_powerlaw_points(t, ccdf) -> PowerLawFit:
    """Least-squares line through ``(log t, log ccdf)``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(ccdf, dtype=float)
    ok = (t > 0) & (y > 0)
    t, y = t[ok], y[ok]
    if np.unique(t).size < 3:
        raise ValueError("need at least three distinct points for a power-law fit")
    slope, intercept = np.polyfit(np.log(t), np.log(y), 1)
    return PowerLawFit(c=float(math.exp(intercept)), delta=float(slope),
                       t_min=float(t.min()), t_max=float(t.max()), n_points=int(t.size))


def fit_powerlaw_tail(dist: AggregateDistribution, lower_fraction: float = 0.10,
                      upper_fraction: float = 0.01) -> PowerLawFit:
    """Fit ``c * t**delta`` to the CCDF on log-log axes.

    Points with less than ``lower_fraction`` of the mass below them or less
    than ``upper_fraction`` above them are excluded.
    """
    keep = (dist.mass_below() >= lower_fraction - 1e-12) & (dist.ccdf >= upper_fraction) & (dist.ccdf > 0)
    return fit_powerlaw_points(dist.values[keep], dist.ccdf[keep])


@dataclass
class FitSummary:
    """Structured record of a whole fitting run."""

    counts: dict[str, int] = field(default_factory=dict)
    eligible: int = 0
    gamma: GammaFit | None = None
    powerlaw: PowerLawFit | None = None
    notes: list[str] = field(default_factory=list)

    def percentages(self) -> dict[str, float]:
        total = sum(self.counts.values())
        return {k: (100.0 * v / total if total else 0.0) for k, v in self.counts.items()}

    def as_dict(self) -> dict:
        return {
            "eligible_pairs": self.eligible,
            "counts": dict(self.counts),
            "percentages": self.percentages(),
            "alpha": self.gamma.alpha if self.gamma else None,
            "b": self.gamma.b if self.gamma else None,
            "c": self.powerlaw.c if self.powerlaw else None,
            "delta": self.powerlaw.delta if self.powerlaw else None,
            "powerlaw_range_seconds": ([self.powerlaw.t_min, self.powerlaw.t_max]
                                       if self.powerlaw else None),
            "powerlaw_points": self.powerlaw.n_points if self.powerlaw else 0,
            "notes": list(self.notes),
        }


def summarize(table: InterContactTable, verdicts: Mapping[tuple[int, int], FitVerdict],
              lower_fraction: float = 0.10, upper_fraction: float = 0.01) -> FitSummary:
    """Gamma fit over rates of pairs that accept the exponential hypothesis
    (``exponential`` or ``both``) plus a power-law fit of the pooled
    inter-contact tail of every classified pair."""
    summary = FitSummary(counts={c.value: 0 for c in Classification})
    for v in verdicts.values():
        summary.counts[v.classification.value] += 1
    summary.eligible = len(verdicts)
    expo = [p for p, v in verdicts.items() if v.classification.accepts_exponential]
    if len(expo) >= 2:
        try:
            summary.gamma = fit_gamma_rates([verdicts[p].rate for p in expo])
        except ValueError as exc:
            summary.notes.append(f"gamma fit skipped: {exc}")
    else:
        summary.notes.append("gamma fit skipped: fewer than two pairs accept the exponential hypothesis")
    if verdicts:
        try:
            dist = aggregate_tail(table, list(verdicts))
            summary.powerlaw = fit_powerlaw_tail(dist, lower_fraction, upper_fraction)
        except ValueError as exc:
            summary.notes.append(f"power-law fit skipped: {exc}")
    return summary
