"""Exponential t-DTN rate matrix and closed-form single-copy routing delays.

Conventions
-----------
* Rates are per second; ``rates[i, j] == 0`` means i and j never meet.
* Unreachable results are :class:`Unreachable` values: floats equal to
  ``inf`` (so they order above every finite delay and serialise as
  ``inf``) that also carry a ``reason``.
* Ties (Dijkstra labels, relay cost ordering) break on node id.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .trace_core import InterContactTable, label_order_key


class Unreachable(float):
    """Infinite delay tagged with why delivery is impossible."""

    def __new__(cls, reason: str = "unreachable"):
        obj = super().__new__(cls, math.inf)
        obj.reason = reason
        return obj

    def __repr__(self):
        return f"Unreachable({self.reason!r})"

    def __str__(self):
        return "inf"


UNREACHABLE = Unreachable("unreachable")
NO_CONTACTS = Unreachable("no-contacts")
STRANDED = Unreachable("stranded-relay")


class IsolatedSourceError(ValueError):
    """The source has no contact with any other node."""


class RateMatrix:
    """Symmetric matrix of pairwise contact rates, immutable."""

    __slots__ = ("rates", "labels")

    def __init__(self, rates, labels: Sequence[str] | None = None):
        r = np.array(rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("rate matrix must be square")
        if not np.isfinite(r).all() or (r < 0).any():
            raise ValueError("rates must be finite and non-negative")
        np.fill_diagonal(r, 0.0)
        if not np.array_equal(r, r.T):
            raise ValueError("rate matrix must be symmetric")
        r.setflags(write=False)
        self.rates = r
        n = r.shape[0]
        self.labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(n))
        if len(self.labels) != n:
            raise ValueError("label count does not match matrix size")

    @classmethod
    def from_pairs(cls, n: int, pairs: dict[tuple[int, int], float], labels=None) -> "RateMatrix":
        r = np.zeros((n, n))
        for (i, j), lam in pairs.items():
            r[i, j] = r[j, i] = lam
        return cls(r, labels)

    @property
    def n(self) -> int:
        return self.rates.shape[0]

    def __getitem__(self, ij) -> float:
        return float(self.rates[ij])

    def scaled(self, k: float) -> "RateMatrix":
        return RateMatrix(self.rates * k, self.labels)

    def neighbours(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.rates[i] > 0)

    def index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def __eq__(self, other):
        if not isinstance(other, RateMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.rates, other.rates)

    __hash__ = None

    def __repr__(self):
        return f"RateMatrix(n={self.n}, nonzero_pairs={int((self.rates > 0).sum()) // 2})"


@dataclass(frozen=True)
class DelayQuery:
    s: int
    d: int

    def __post_init__(self):
        if self.s == self.d:
            raise ValueError("source and destination must differ")


@dataclass(frozen=True)
class PathDelay:
    path: tuple[int, ...]
    expected_delay: float


@dataclass(frozen=True)
class SpraySolution:
    relay_set: frozenset[int]
    expected_delay: float
    lambda_big: float


def _check(m: RateMatrix, q: DelayQuery):
    for v in (q.s, q.d):
        if not 0 <= v < m.n:
            raise ValueError(f"node {v} not in a {m.n}-node matrix")


def rates_from_table(table: InterContactTable, pairs: Iterable[tuple[int, int]] | None = None) -> RateMatrix:
    """Rates ``1 / mean`` for the given pairs (default: every pair with samples)."""
    n = len(table.labels)
    pairs = [p for p in table if table.samples(p).size] if pairs is None else list(pairs)
    r = np.zeros((n, n))
    for p in pairs:
        mean = table.mean(p)
        if not mean > 0:
            raise ValueError(f"pair {p} has no positive mean inter-contact time")
        i, j = p
        r[i, j] = r[j, i] = 1.0 / mean
    return RateMatrix(r, table.labels)


def wait_delay(m: RateMatrix, q: DelayQuery) -> float:
    _check(m, q)
    lam = m.rates[q.s, q.d]
    return 1.0 / lam if lam > 0 else UNREACHABLE


def med_path(m: RateMatrix, q: DelayQuery) -> PathDelay:
    """Minimum-expected-delay path: Dijkstra over hop weights ``1/lambda``.

    Labels are ``(delay, path)`` tuples, so among equal-delay paths the
    lexicographically smallest node sequence wins.
    """
    _check(m, q)
    r = m.rates
    best: dict[int, tuple[float, tuple[int, ...]]] = {q.s: (0.0, (q.s,))}
    heap = [(0.0, (q.s,))]
    done = set()
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == q.d:
            # Hop weights are re-summed left to right (the documented formula).
            return PathDelay(path, path_delay(m, path))
        for v in np.flatnonzero(r[u] > 0):
            v = int(v)
            if v in done:
                continue
            cand = (dist + 1.0 / r[u, v], path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    return PathDelay((), UNREACHABLE)


def path_delay(m: RateMatrix, path: Sequence[int]) -> float:
    """Sum of ``1/lambda`` over consecutive hops; unreachable if any hop has rate 0."""
    total = 0.0
    for u, v in zip(path, path[1:]):
        if u == v:
            raise ValueError("consecutive path nodes must differ")
        lam = m.rates[u, v]
        if lam <= 0:
            return UNREACHABLE
        total += 1.0 / lam
    return total


def med_shortcut_delay(m: RateMatrix, path: Sequence[int]) -> float:
    """Expected delay along a fixed path when every custodian also delivers on meeting d.

    At hop ``i`` the custodian races its next hop (rate ``mu``) against the
    destination (rate ``nu``): it waits ``1/(mu + nu)`` on average and moves
    on with probability ``mu/(mu + nu)``.  Never larger than the plain path sum.
    """
    if len(path) < 2:
        return UNREACHABLE
    d = path[-1]
    total = 0.0
    reach = 1.0
    for u, v in zip(path, path[1:]):
        mu = m.rates[u, v]
        if mu <= 0:
            return UNREACHABLE
        nu = m.rates[u, d] if v != d else 0.0
        total += reach / (mu + nu)
        reach *= mu / (mu + nu)
    return total


def spray_decomposition(m: RateMatrix, s: int) -> tuple[float, np.ndarray]:
    """Total encounter rate of ``s`` and first-encounter probabilities per node."""
    row = m.rates[s]
    big = float(row.sum())
    if big <= 0:
        raise IsolatedSourceError(f"node {s} never meets anyone")
    return big, row / big


def one_sw_subset_delay(m: RateMatrix, q: DelayQuery, relays: Iterable[int]) -> float:
    """Expected delay of one-relay spray-and-wait restricted to ``relays``.

    ``(1 + sum_r lam_sr / lam_rd) / sum_r lam_sr``; the destination, if in
    the set, adds nothing to the numerator.  Members never met by the source
    are inert; a member met by the source that never meets the destination
    strands the bundle.
    """
    _check(m, q)
    r = m.rates
    num = 1.0
    den = 0.0
    for v in sorted(set(relays)):
        if v == q.s or not 0 <= v < m.n:
            raise ValueError(f"invalid relay {v}")
        lam_s = r[q.s, v]
        if lam_s <= 0:
            continue
        den += lam_s
        if v == q.d:
            continue
        lam_d = r[v, q.d]
        if lam_d <= 0:
            return STRANDED
        num += lam_s / lam_d
    if den <= 0:
        return UNREACHABLE
    return num / den


def one_sw_delay(m: RateMatrix, q: DelayQuery) -> float:
    """Unrestricted one-relay spray-and-wait: the source hands over to whoever it meets first."""
    _check(m, q)
    if m.rates[q.s].sum() <= 0:
        return NO_CONTACTS
    return one_sw_subset_delay(m, q, (v for v in range(m.n) if v != q.s))


def eligible_relays(m: RateMatrix, q: DelayQuery) -> list[int]:
    """Relays usable by the modified 1-SW: met by s, and meeting d (d itself if met)."""
    r = m.rates
    return [v for v in range(m.n)
            if v != q.s and r[q.s, v] > 0 and (v == q.d or r[v, q.d] > 0)]


def one_sw_modified_delay(m: RateMatrix, q: DelayQuery) -> float:
    _check(m, q)
    return one_sw_subset_delay(m, q, eligible_relays(m, q))


def _relay_cost(m: RateMatrix, q: DelayQuery, v: int) -> float:
    return 0.0 if v == q.d else 1.0 / m.rates[v, q.d]


def one_sw_star(m: RateMatrix, q: DelayQuery) -> SpraySolution:
    """Relay subset minimising the restricted spray-and-wait delay.

    Adding relay r changes ``(1 + A) / B`` to ``(1 + A + a_r) / (B + b_r)``
    with ``a_r / b_r = 1 / lam_rd``; this improves the objective exactly when
    ``1 / lam_rd`` is below it.  Hence the optimum is a prefix of the
    candidates sorted by ``1 / lam_rd`` (destination first, cost 0), and the
    greedy stops at the first candidate that does not strictly improve.
    """
    _check(m, q)
    cands = sorted(eligible_relays(m, q), key=lambda v: (_relay_cost(m, q, v), v))
    if not cands:
        return SpraySolution(frozenset(), UNREACHABLE, 0.0)
    chosen = [cands[0]]
    value = one_sw_subset_delay(m, q, chosen)
    for v in cands[1:]:
        if not _relay_cost(m, q, v) < value:
            break
        chosen.append(v)
        value = one_sw_subset_delay(m, q, chosen)
    return SpraySolution(frozenset(chosen), value, float(sum(m.rates[q.s, v] for v in chosen)))


# --- brute-force oracles -----------------------------------------------------

def brute_force_one_sw_star(m: RateMatrix, q: DelayQuery, max_n: int = 14) -> SpraySolution:
    """Exhaustive minimum over every non-empty subset of ``nodes - {s}``.

    Ties go to the smaller set, then the lexicographically smaller sorted
    member tuple.
    """
    _check(m, q)
    if m.n > max_n:
        raise ValueError(f"exhaustive search capped at n={max_n}")
    others = [v for v in range(m.n) if v != q.s]
    best_key = None
    best_set: tuple[int, ...] = ()
    best_val = UNREACHABLE
    for k in range(1, len(others) + 1):
        for subset in itertools.combinations(others, k):
            val = one_sw_subset_delay(m, q, subset)
            if math.isinf(val):
                continue
            # Members the source never meets do not change the value.
            key = (val, len(subset), subset)
            if best_key is None or key < best_key:
                best_key, best_set, best_val = key, subset, val
    if best_key is None:
        return SpraySolution(frozenset(), UNREACHABLE, 0.0)
    return SpraySolution(frozenset(best_set), best_val,
                         float(sum(m.rates[q.s, v] for v in best_set)))


def brute_force_med_path(m: RateMatrix, q: DelayQuery, max_n: int = 12) -> PathDelay:
    """Minimum over every simple path by depth-first enumeration (no pruning)."""
    _check(m, q)
    if m.n > max_n:
        raise ValueError(f"exhaustive search capped at n={max_n}")
    r = m.rates
    adj = [[int(v) for v in np.flatnonzero(r[u] > 0)] for u in range(m.n)]
    best: tuple[float, tuple[int, ...]] | None = None
    stack = [(q.s, (q.s,), 0.0)]
    while stack:
        u, path, cost = stack.pop()
        if u == q.d:
            cand = (cost, path)
            if best is None or cand < best:
                best = cand
            continue
        for v in adj[u]:
            if v not in path:
                stack.append((v, path + (v,), cost + 1.0 / r[u, v]))
    if best is None:
        return PathDelay((), UNREACHABLE)
    return PathDelay(best[1], path_delay(m, best[1]))


# --- I/O ---------------------------------------------------------------------

def write_rates_csv(m: RateMatrix, dest: IO[str] | str) -> None:
    """Sparse ``i,j,lambda_per_second`` triples, each unordered pair once."""
    fh, close = (open(dest, "w", encoding="utf-8", newline=""), True) if isinstance(dest, str) else (dest, False)
    try:
        fh.write(f"# nodes={';'.join(m.labels)}\n")
        fh.write("i,j,lambda_per_second\n")
        for i, j in zip(*np.nonzero(np.triu(m.rates, 1))):
            fh.write(f"{m.labels[i]},{m.labels[j]},{float(m.rates[i, j])!r}\n")
    finally:
        if close:
            fh.close()


def read_rates_csv(source, labels: Sequence[str] | None = None) -> RateMatrix:
    """Inverse of :func:`write_rates_csv`.

    The node set comes from ``labels``, else the ``# nodes=`` metadata line,
    else the labels appearing in the rows.
    """
    from .trace_core import TraceFormatError

    fh, close = (open(source, encoding="utf-8"), True) if isinstance(source, str) else (source, False)
    try:
        meta_nodes = None
        rows = []
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("nodes="):
                    text = line[1:].strip()[len("nodes="):]
                    meta_nodes = [t for t in text.split(";") if t]
                continue
            parts = [p.strip() for p in line.split(",")]
            if not header_seen:
                if parts != ["i", "j", "lambda_per_second"]:
                    raise TraceFormatError("expected header 'i,j,lambda_per_second'", lineno)
                header_seen = True
                continue
            if len(parts) != 3:
                raise TraceFormatError(f"expected 3 fields, got {len(parts)}", lineno)
            try:
                lam = float(parts[2])
            except ValueError:
                raise TraceFormatError(f"bad rate {parts[2]!r}", lineno) from None
            if not (math.isfinite(lam) and lam >= 0):
                raise TraceFormatError(f"rate must be finite and non-negative, got {parts[2]!r}", lineno)
            if parts[0] == parts[1]:
                raise TraceFormatError("self pair", lineno)
            rows.append((lineno, parts[0], parts[1], lam))
    finally:
        if close:
            fh.close()
    if labels is None:
        labels = meta_nodes
    if labels is None:
        labels = sorted({r[1] for r in rows} | {r[2] for r in rows}, key=label_order_key)
    ids = {lab: i for i, lab in enumerate(labels)}
    r = np.zeros((len(labels), len(labels)))
    for lineno, a, b, lam in rows:
        if a not in ids or b not in ids:
            raise TraceFormatError(f"unknown node in pair ({a}, {b})", lineno)
        i, j = ids[a], ids[b]
        r[i, j] = r[j, i] = lam
    return RateMatrix(r, labels)
