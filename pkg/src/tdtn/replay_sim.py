"""Discrete-event replay of single-copy routing strategies over a contact trace.

Contacts are processed in trace order (start time, then canonical pair).
Forwarding is evaluated at the start of each contact.  A bundle moves at
most once per instant, which keeps every custody log strictly increasing
in time.
"""

from __future__ import annotations

import enum
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from . import rate_model
from .rate_model import DelayQuery, RateMatrix
from .trace_core import ContactTrace

DAY = 86400.0

WAIT = "wait"
ONE_SW_MODIFIED = "one_sw_modified"
ONE_SW_STAR = "one_sw_star"
MED = "med"
STRATEGIES = (WAIT, ONE_SW_MODIFIED, ONE_SW_STAR, MED)


class Action(enum.Enum):
    KEEP = "keep"
    TRANSFER = "transfer"
    DELIVER = "deliver"


@dataclass
class Bundle:
    id: int
    source: int
    destination: int
    created: float
    custodian: int = -1
    hop_log: list[tuple[float, int, int]] = field(default_factory=list)
    delivered_at: float | None = None
    # Strategy state: relay set (1-SW*) or fixed path (MED).
    relay_set: frozenset[int] = frozenset()
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.custodian < 0:
            self.custodian = self.source

    @property
    def delivered(self) -> bool:
        return self.delivered_at is not None

    @property
    def hops(self) -> int:
        return len(self.hop_log)

    @property
    def at_source(self) -> bool:
        return self.custodian == self.source

    def move(self, t: float, to: int) -> None:
        if self.hop_log and t <= self.hop_log[-1][0]:
            raise RuntimeError("custody log must be strictly increasing in time")
        self.hop_log.append((t, self.custodian, to))
        self.custodian = to
        if to == self.destination:
            self.delivered_at = t


@dataclass(frozen=True)
class StrategyConfig:
    """``med_shortcut=False`` gives strict source-routed MED (no early delivery)."""

    kind: str
    rates: RateMatrix | None = None
    med_shortcut: bool = True

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind != WAIT and self.rates is None:
            raise ValueError(f"strategy {self.kind!r} needs a rate matrix")


def forward_rule_wait(bundle: Bundle, peer: int) -> Action:
    return Action.DELIVER if peer == bundle.destination else Action.KEEP


def forward_rule_one_sw_modified(bundle: Bundle, peer: int, rates: RateMatrix) -> Action:
    """The source sprays to the first node that can still meet d; relays only deliver."""
    if peer == bundle.destination:
        return Action.DELIVER
    if bundle.at_source and rates.rates[peer, bundle.destination] > 0:
        return Action.TRANSFER
    return Action.KEEP


def forward_rule_one_sw_star(bundle: Bundle, peer: int, rates: RateMatrix | None = None) -> Action:
    """The source sprays to the first member of its optimal relay set; relays only deliver."""
    if peer == bundle.destination:
        return Action.DELIVER
    if bundle.at_source and peer in bundle.relay_set:
        return Action.TRANSFER
    return Action.KEEP


def forward_rule_med(bundle: Bundle, peer: int, rates: RateMatrix | None = None,
                     shortcut: bool = True) -> Action:
    """Follow the fixed path; with ``shortcut`` any custodian delivers on meeting d."""
    path = bundle.path
    if not path:
        return Action.KEEP
    if shortcut and peer == bundle.destination:
        return Action.DELIVER
    k = path.index(bundle.custodian)
    if k + 1 < len(path) and peer == path[k + 1]:
        return Action.TRANSFER
    return Action.KEEP


def analytic_delay(kind: str, m: RateMatrix, q: DelayQuery) -> float:
    """Closed-form expected delay matching each replayed strategy."""
    if kind == WAIT:
        return rate_model.wait_delay(m, q)
    if kind == ONE_SW_MODIFIED:
        return rate_model.one_sw_modified_delay(m, q)
    if kind == ONE_SW_STAR:
        return rate_model.one_sw_star(m, q).expected_delay
    if kind == MED:
        return rate_model.med_path(m, q).expected_delay
    raise ValueError(f"unknown strategy {kind!r}")


@dataclass(frozen=True)
class BundleRecord:
    bundle_id: int
    s: int
    d: int
    strategy: str
    delivered: bool
    delay: float
    hops: int
    theoretical: float
    hop_log: tuple[tuple[float, int, int], ...] = ()


@dataclass(frozen=True)
class StrategySummary:
    strategy: str
    bundles: int
    delivery_ratio: float
    mean_delay_days: float
    median_delay_days: float
    theoretical_delay_days: float
    mean_hops: float


@dataclass
class SimulationReport:
    summaries: dict[str, StrategySummary] = field(default_factory=dict)
    records: list[BundleRecord] = field(default_factory=list)
    horizon_seconds: float = 0.0

    def merge(self, other: "SimulationReport") -> "SimulationReport":
        return SimulationReport({**self.summaries, **other.summaries}, self.records + other.records,
                                max(self.horizon_seconds, other.horizon_seconds))

    def records_for(self, strategy: str) -> list[BundleRecord]:
        return [r for r in self.records if r.strategy == strategy]


def _summarise(kind: str, records: list[BundleRecord], cap: float) -> StrategySummary:
    done = [r for r in records if r.delivered]
    delays = [r.delay / DAY for r in done]
    theo = [min(r.theoretical, cap) / DAY for r in records]
    return StrategySummary(
        strategy=kind,
        bundles=len(records),
        delivery_ratio=100.0 * len(done) / len(records) if records else 0.0,
        mean_delay_days=statistics.fmean(delays) if delays else math.nan,
        median_delay_days=statistics.median(delays) if delays else math.nan,
        theoretical_delay_days=(statistics.fmean(theo) if theo and not any(map(math.isnan, theo))
                                else math.nan),
        mean_hops=statistics.fmean([r.hops for r in done]) if done else math.nan,
    )


def replay(trace: ContactTrace, queries: Sequence[DelayQuery], strategy: StrategyConfig,
           created: float | None = None) -> SimulationReport:
    """Replay ``trace`` for one bundle per query under ``strategy``.

    Bundles are created at ``created`` (default: trace start).  Undelivered
    bundles count at the horizon cap in the theoretical delay only.
    """
    t0 = trace.horizon[0] if created is None else float(created)
    for q in queries:
        if not (0 <= q.s < trace.n and 0 <= q.d < trace.n):
            raise ValueError(f"query ({q.s}, {q.d}) names a node outside the trace")
    m = strategy.rates
    if m is not None and m.n != trace.n:
        raise ValueError("rate matrix and trace disagree on node count")
    kind = strategy.kind
    bundles = []
    for k, q in enumerate(queries):
        b = Bundle(k, q.s, q.d, t0)
        if kind == ONE_SW_STAR:
            b.relay_set = rate_model.one_sw_star(m, q).relay_set
        elif kind == MED:
            b.path = rate_model.med_path(m, q).path
        bundles.append(b)
    _run(trace, bundles, strategy, t0)

    cap = trace.horizon[1] - t0
    records = []
    for b, q in zip(bundles, queries):
        theo = analytic_delay(kind, m, q) if m is not None else math.nan
        records.append(BundleRecord(
            bundle_id=b.id, s=q.s, d=q.d, strategy=kind, delivered=b.delivered,
            delay=(b.delivered_at - t0) if b.delivered else math.inf,
            hops=b.hops, theoretical=theo, hop_log=tuple(b.hop_log)))
    return SimulationReport({kind: _summarise(kind, records, cap)}, records, cap)


def _run(trace: ContactTrace, bundles: list[Bundle], strategy: StrategyConfig, t0: float) -> None:
    kind, m = strategy.kind, strategy.rates
    if kind == WAIT:
        def rule(b, peer):
            return forward_rule_wait(b, peer)
    elif kind == ONE_SW_MODIFIED:
        def rule(b, peer):
            return forward_rule_one_sw_modified(b, peer, m)
    elif kind == ONE_SW_STAR:
        rule = forward_rule_one_sw_star
    else:
        def rule(b, peer):
            return forward_rule_med(b, peer, shortcut=strategy.med_shortcut)

    held: dict[int, list[Bundle]] = defaultdict(list)
    for b in bundles:
        held[b.custodian].append(b)
    pending = len(bundles)
    first = int(np.searchsorted(trace.start, t0, side="left"))
    a_col, b_col, s_col = trace.a.tolist(), trace.b.tolist(), trace.start.tolist()
    for k in range(first, len(a_col)):
        if not pending:
            break
        u, v, t = a_col[k], b_col[k], s_col[k]
        if u not in held and v not in held:
            continue
        moves = []
        for node, peer in ((u, v), (v, u)):
            for bd in held.get(node, ()):
                if bd.hop_log and bd.hop_log[-1][0] >= t:
                    continue
                act = rule(bd, peer)
                if act is not Action.KEEP:
                    moves.append((bd, node, peer))
        for bd, node, peer in moves:
            bd.move(t, peer)
            held[node].remove(bd)
            if not held[node]:
                del held[node]
            if bd.delivered:
                pending -= 1
            else:
                held[peer].append(bd)


def run_strategies(trace: ContactTrace, queries: Sequence[DelayQuery],
                   configs: Iterable[StrategyConfig], created: float | None = None) -> SimulationReport:
    """Replay every strategy on the same query set and merge the reports."""
    report = SimulationReport()
    for cfg in configs:
        report = report.merge(replay(trace, queries, cfg, created))
    return report


def random_queries(n: int, count: int, rng: np.random.Generator,
                   candidates: Sequence[tuple[int, int]] | None = None) -> list[DelayQuery]:
    """``count`` distinct ordered (s, d) pairs, s != d, drawn without replacement."""
    if candidates is None:
        candidates = [(s, d) for s in range(n) for d in range(n) if s != d]
    if count > len(candidates):
        raise ValueError(f"only {len(candidates)} distinct queries available")
    idx = rng.choice(len(candidates), size=count, replace=False)
    return [DelayQuery(*candidates[i]) for i in sorted(idx)]


TABLE_HEADER = ("strategy", "delivery ratio (%)", "A delay (days)", "M delay (days)",
                "th. delay (days)", "hop count (hops)")


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else ("inf" if math.isinf(x) else f"{x:.6g}")


def write_summary_csv(report: SimulationReport, dest: IO[str]) -> None:
    dest.write(",".join(TABLE_HEADER) + "\n")
    for s in report.summaries.values():
        dest.write(",".join([s.strategy, _num(s.delivery_ratio), _num(s.mean_delay_days),
                             _num(s.median_delay_days), _num(s.theoretical_delay_days),
                             _num(s.mean_hops)]) + "\n")


def write_bundles_csv(report: SimulationReport, dest: IO[str], labels: Sequence[str] | None = None) -> None:
    dest.write("bundle_id,s,d,strategy,delivered,delay_s,hops\n")
    for r in report.records:
        s = labels[r.s] if labels else str(r.s)
        d = labels[r.d] if labels else str(r.d)
        delay = repr(float(r.delay)) if r.delivered else "inf"
        dest.write(f"{r.bundle_id},{s},{d},{r.strategy},{int(r.delivered)},{delay},{r.hops}\n")


def format_table(report: SimulationReport) -> str:
    """Fixed-width rendering of the per-strategy summary."""
    rows = [TABLE_HEADER] + [
        (s.strategy, f"{s.delivery_ratio:.1f}", _num(s.mean_delay_days), _num(s.median_delay_days),
         _num(s.theoretical_delay_days), _num(s.mean_hops))
        for s in report.summaries.values()
    ]
    widths = [max(len(r[c]) for r in rows) for c in range(len(TABLE_HEADER))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows)
