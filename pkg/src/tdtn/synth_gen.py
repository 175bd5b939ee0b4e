"""Synthetic exponential t-DTNs.

Randomness uses numpy's ``SeedSequence``/``PCG64`` (bit-identical output for
a given numpy release).  Every pair draws from its own substream keyed on
``(seed, stream, i, j)``, so a pair's rate and contact process do not depend
on ``n`` or on the order pairs are generated in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .rate_model import RateMatrix
from .trace_core import ContactTrace

DEFAULT_ALPHA = 2.26
DEFAULT_B = 113766.9

_RATE_STREAM = 0
_TRACE_STREAM = 1
QUERY_STREAM = 2


@dataclass(frozen=True)
class GammaRates:
    alpha: float = DEFAULT_ALPHA
    b: float = DEFAULT_B

    def __post_init__(self):
        if not (self.alpha > 0 and self.b > 0):
            raise ValueError("gamma parameters must be positive")


RateSource = Union[RateMatrix, GammaRates, float]


@dataclass(frozen=True)
class SynthSpec:
    n: int
    rate_source: RateSource
    horizon: float
    seed: int = 0
    contact_duration: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("node count must be non-negative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.contact_duration < 0:
            raise ValueError("contact duration must be non-negative")
        if isinstance(self.rate_source, RateMatrix) and self.rate_source.n != self.n:
            raise ValueError("explicit rate matrix size does not match n")
        if isinstance(self.rate_source, (int, float)) and self.rate_source < 0:
            raise ValueError("constant rate must be non-negative")

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, str]) -> "SynthSpec":
        """Build from flat ``key=value`` settings (``n``, ``horizon``, ``seed``,
        ``contact_duration`` and either ``rate`` or ``alpha``/``b``)."""
        known = {"n", "horizon", "seed", "contact_duration", "rate", "alpha", "b"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown synth settings: {sorted(unknown)}")
        if "rate" in cfg:
            source: RateSource = float(cfg["rate"])
        else:
            source = GammaRates(float(cfg.get("alpha", DEFAULT_ALPHA)), float(cfg.get("b", DEFAULT_B)))
        return cls(n=int(cfg["n"]), rate_source=source, horizon=float(cfg["horizon"]),
                   seed=int(cfg.get("seed", 0)), contact_duration=float(cfg.get("contact_duration", 0.0)))


def pair_rng(seed: int, stream: int, i: int, j: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, i, j])))


def sample_rates(spec: SynthSpec) -> RateMatrix:
    """One independent rate per unordered pair."""
    n = spec.n
    src = spec.rate_source
    if isinstance(src, RateMatrix):
        return src
    r = np.zeros((n, n))
    if isinstance(src, GammaRates):
        for i in range(n):
            for j in range(i + 1, n):
                r[i, j] = r[j, i] = pair_rng(spec.seed, _RATE_STREAM, i, j).gamma(src.alpha, 1.0 / src.b)
    else:
        r[:] = float(src)
    return RateMatrix(r)


def _poisson_instants(rng: np.random.Generator, lam: float, horizon: float) -> np.ndarray:
    """Contact instants in [0, horizon]: cumulative exponential gaps from t = 0."""
    expected = lam * horizon
    chunk = max(16, int(expected + 6 * math.sqrt(expected) + 8))
    out = []
    t = 0.0
    while True:
        times = t + np.cumsum(rng.exponential(1.0 / lam, chunk))
        inside = times[times <= horizon]
        out.append(inside)
        if inside.size < chunk:
            break
        t = times[-1]
    return np.concatenate(out)


def generate_trace(m: RateMatrix, horizon: float, seed: int = 0,
                   contact_duration: float = 0.0) -> ContactTrace:
    """Independent Poisson contact processes, one per pair with a positive rate.

    Contacts last ``contact_duration`` seconds (clipped at the horizon);
    overlapping contacts of one pair are merged like any ingested trace.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if contact_duration < 0:
        raise ValueError("contact duration must be non-negative")
    r = m.rates
    a_parts, b_parts, t_parts = [], [], []
    for i, j in zip(*np.nonzero(np.triu(r, 1))):
        t = _poisson_instants(pair_rng(seed, _TRACE_STREAM, int(i), int(j)), float(r[i, j]), horizon)
        if t.size:
            a_parts.append(np.full(t.size, i))
            b_parts.append(np.full(t.size, j))
            t_parts.append(t)
    if t_parts:
        a = np.concatenate(a_parts)
        b = np.concatenate(b_parts)
        start = np.concatenate(t_parts)
    else:
        a = b = np.zeros(0, dtype=np.int64)
        start = np.zeros(0)
    end = np.minimum(start + contact_duration, horizon)
    return ContactTrace.from_arrays(m.labels, a, b, start, end, horizon=(0.0, float(horizon)))


def generate(spec: SynthSpec) -> tuple[RateMatrix, ContactTrace]:
    m = sample_rates(spec)
    return m, generate_trace(m, spec.horizon, spec.seed, spec.contact_duration)
