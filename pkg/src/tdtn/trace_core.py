"""Contact-trace data model, ingestion and inter-contact extraction.

A trace is stored column-wise (numpy arrays) because synthetic traces
routinely hold millions of contacts.  ``ContactTrace.events`` materialises
the row view on demand.

Node labels are opaque strings.  Dense integer ids are assigned either in
roster order or, when no roster is given, in natural label order (numeric
labels sort numerically), so re-ingesting a canonical trace reproduces the
same ids.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

PING_PONG_SECONDS = 1800.0
WEEK_SECONDS = 7 * 24 * 3600.0
MIN_CONTACTS = 20

END_TO_START = "end-to-start"
START_TO_START = "start-to-start"
GAP_CONVENTIONS = (END_TO_START, START_TO_START)

CONTACT_HEADER = ("a", "b", "start", "end")
SESSION_HEADER = ("node", "ap", "start", "end")


class TraceFormatError(ValueError):
    """Malformed trace input.  ``line`` is the 1-based source line, if known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ContactEvent:
    a: int
    b: int
    start: float
    end: float

    def __post_init__(self):
        if self.a >= self.b:
            raise ValueError(f"contact pair must be canonical (a < b), got ({self.a}, {self.b})")
        if self.start > self.end:
            raise ValueError("contact start after end")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.a, self.b)

    def sort_key(self):
        return (self.start, self.a, self.b)


@dataclass(frozen=True)
class ApSession:
    node: str
    ap: str
    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("session start after end")


def label_order_key(label: str):
    """Sort key placing integer labels first, in numeric order."""
    if label.isdigit():
        return (0, int(label), label)
    return (1, 0, label)


def _readonly(x: np.ndarray) -> np.ndarray:
    x.setflags(write=False)
    return x


def _merge_groups(a, b, start, end, threshold: float | None):
    """Coalesce contacts of the same pair.

    With ``threshold=None`` overlapping or touching intervals are merged
    (gap <= 0).  Otherwise any gap strictly below ``threshold`` is closed.
    Input must be sorted by (a, b, start).
    """
    if a.size < 2:
        return a, b, start, end
    same = (a[1:] == a[:-1]) & (b[1:] == b[:-1])
    gap = start[1:] - end[:-1]
    close = same & ((gap <= 0) if threshold is None else (gap < threshold))
    if not close.any():
        return a, b, start, end
    # Only groups containing a close consecutive pair need the slow path:
    # without one, consecutive intervals are disjoint and so is the group.
    keep_a, keep_b, keep_s, keep_e = [], [], [], []
    i = 0
    m = a.size
    while i < m:
        j = i
        cur_s, cur_e = start[i], end[i]
        while j + 1 < m and same[j]:
            j += 1
            g = start[j] - cur_e
            if (g <= 0) if threshold is None else (g < threshold):
                cur_e = max(cur_e, end[j])
            else:
                keep_a.append(a[i]); keep_b.append(b[i])
                keep_s.append(cur_s); keep_e.append(cur_e)
                cur_s, cur_e = start[j], end[j]
        keep_a.append(a[i]); keep_b.append(b[i])
        keep_s.append(cur_s); keep_e.append(cur_e)
        i = j + 1
    return (np.asarray(keep_a, dtype=np.int64), np.asarray(keep_b, dtype=np.int64),
            np.asarray(keep_s, dtype=float), np.asarray(keep_e, dtype=float))


class ContactTrace:
    """Canonical, time-ordered pairwise contacts among ``n`` labelled nodes.

    Use :meth:`from_arrays` (or the ingest functions) to build one; the
    constructor assumes its inputs are already canonical.
    """

    __slots__ = ("labels", "a", "b", "start", "end", "horizon")

    def __init__(self, labels, a, b, start, end, horizon):
        self.labels = tuple(labels)
        self.a = _readonly(np.asarray(a, dtype=np.int64))
        self.b = _readonly(np.asarray(b, dtype=np.int64))
        self.start = _readonly(np.asarray(start, dtype=float))
        self.end = _readonly(np.asarray(end, dtype=float))
        self.horizon = (float(horizon[0]), float(horizon[1]))

    @classmethod
    def from_arrays(cls, labels: Sequence[str], a, b, start, end,
                    horizon: tuple[float, float] | None = None,
                    merge_threshold: float | None = None) -> "ContactTrace":
        """Canonicalise raw columns: order pairs, merge, sort, check horizon."""
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        start = np.asarray(start, dtype=float)
        end = np.asarray(end, dtype=float)
        n = len(labels)
        if not (a.size == b.size == start.size == end.size):
            raise ValueError("column lengths differ")
        if a.size:
            if (a == b).any():
                raise ValueError("self-contact (a == b)")
            if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= n:
                raise ValueError("node id out of range")
            if (start > end).any():
                raise ValueError("contact start after end")
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        order = np.lexsort((end, start, hi, lo))
        lo, hi, start, end = _merge_groups(lo[order], hi[order], start[order], end[order],
                                           merge_threshold)
        order = np.lexsort((hi, lo, start))
        lo, hi, start, end = lo[order], hi[order], start[order], end[order]
        if horizon is None:
            horizon = (float(start.min()), float(end.max())) if start.size else (0.0, 0.0)
        elif start.size and (start.min() < horizon[0] or end.max() > horizon[1]):
            raise ValueError("contact outside trace horizon")
        if horizon[0] > horizon[1]:
            raise ValueError("empty horizon")
        return cls(labels, lo, hi, start, end, horizon)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def duration(self) -> float:
        return self.horizon[1] - self.horizon[0]

    def __len__(self) -> int:
        return int(self.a.size)

    @property
    def events(self) -> tuple[ContactEvent, ...]:
        return tuple(ContactEvent(int(i), int(j), float(s), float(e))
                     for i, j, s, e in zip(self.a, self.b, self.start, self.end))

    def index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def __eq__(self, other):
        if not isinstance(other, ContactTrace):
            return NotImplemented
        return (self.labels == other.labels and self.horizon == other.horizon
                and np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b)
                and np.array_equal(self.start, other.start)
                and np.array_equal(self.end, other.end))

    __hash__ = None

    def __repr__(self):
        return f"ContactTrace(n={self.n}, events={len(self)}, horizon={self.horizon})"


def _parse_time(value, line) -> float:
    try:
        t = float(value)
    except (TypeError, ValueError):
        raise TraceFormatError(f"unparseable timestamp {value!r}", line) from None
    if not math.isfinite(t) or t < 0:
        raise TraceFormatError(f"timestamp must be a finite non-negative number, got {value!r}", line)
    return t


def _node_ids(names: Iterable[str], roster: Sequence[str] | None):
    if roster is not None:
        labels = tuple(str(r) for r in roster)
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate label in roster")
    else:
        labels = tuple(sorted(set(names), key=label_order_key))
    return labels, {lab: i for i, lab in enumerate(labels)}


def _ingest(rows: list[tuple[int, str, str, float, float]], roster, horizon) -> ContactTrace:
    names = set()
    for line, x, y, s, e in rows:
        if x == y:
            raise TraceFormatError(f"self-contact for node {x!r}", line)
        if s > e:
            raise TraceFormatError(f"start {s} after end {e}", line)
        names.add(x)
        names.add(y)
    labels, ids = _node_ids(names, roster)
    if roster is not None:
        for line, x, y, _, _ in rows:
            for v in (x, y):
                if v not in ids:
                    raise TraceFormatError(f"unknown node {v!r} (not in roster)", line)
    a = [ids[r[1]] for r in rows]
    b = [ids[r[2]] for r in rows]
    s = [r[3] for r in rows]
    e = [r[4] for r in rows]
    try:
        return ContactTrace.from_arrays(labels, a, b, s, e, horizon=horizon)
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from None


def _normalise_records(records, width=4) -> list:
    rows = []
    for k, rec in enumerate(records, start=1):
        if len(rec) == width + 1:
            line, rec = rec[0], rec[1:]
        else:
            line = k
        if len(rec) != width:
            raise TraceFormatError(f"expected {width} fields, got {len(rec)}", line)
        x, y, s, e = rec
        rows.append((line, str(x).strip(), str(y).strip(), _parse_time(s, line), _parse_time(e, line)))
    return rows


def ingest_contact_trace(records: Iterable[Sequence], roster: Sequence[str] | None = None,
                         horizon: tuple[float, float] | None = None) -> ContactTrace:
    """Build a canonical trace from ``(a, b, start, end)`` records.

    Records may carry a leading source line number, ``(line, a, b, start, end)``,
    which is then used in error messages.  Overlapping or touching contacts
    of the same unordered pair are merged.
    """
    return _ingest(_normalise_records(records), roster, horizon)


def _session_overlaps(sessions: list[tuple[int, float, float]]):
    """Yield (u, v, lo, hi) for every intersecting pair of sessions at one AP."""
    sessions = sorted(sessions, key=lambda s: (s[1], s[2], s[0]))
    active: list[tuple[int, float, float]] = []
    for node, s, e in sessions:
        active = [x for x in active if x[2] >= s]
        for other, s2, e2 in active:
            if other != node:
                yield other, node, s, min(e, e2)
        active.append((node, s, e))


def sessions_to_contacts(sessions: Iterable, roster: Sequence[str] | None = None,
                         horizon: tuple[float, float] | None = None) -> ContactTrace:
    """Derive contacts from access-point sessions.

    Two nodes are in contact over every non-empty intersection of their
    sessions at the same AP (closed intervals, so touching sessions yield a
    zero-length contact).  The default horizon spans all sessions.
    """
    rows = []
    for k, rec in enumerate(sessions, start=1):
        if isinstance(rec, ApSession):
            rec = (rec.node, rec.ap, rec.start, rec.end)
        rows.extend(_normalise_records([rec] if len(rec) == 5 else [(k, *rec)]))
    for line, _, _, s, e in rows:
        if s > e:
            raise TraceFormatError(f"start {s} after end {e}", line)
    labels, ids = _node_ids((r[1] for r in rows), roster)
    by_ap: dict[str, list] = defaultdict(list)
    for line, node, ap, s, e in rows:
        if node not in ids:
            raise TraceFormatError(f"unknown node {node!r} (not in roster)", line)
        by_ap[ap].append((ids[node], s, e))
    a, b, st, en = [], [], [], []
    for ap in sorted(by_ap):
        for u, v, lo, hi in _session_overlaps(by_ap[ap]):
            a.append(u); b.append(v); st.append(lo); en.append(hi)
    if horizon is None and rows:
        horizon = (min(r[3] for r in rows), max(r[4] for r in rows))
    return ContactTrace.from_arrays(labels, a, b, st, en, horizon=horizon)


def merge_ping_pong(trace: ContactTrace, threshold: float = PING_PONG_SECONDS) -> ContactTrace:
    """Coalesce successive contacts of a pair separated by less than ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return ContactTrace.from_arrays(trace.labels, trace.a, trace.b, trace.start, trace.end,
                                    horizon=trace.horizon, merge_threshold=threshold)


class InterContactTable:
    """Per-pair inter-contact samples, keyed on the canonical pair ``(i, j)``, i < j.

    ``count`` is the number of contacts backing a pair's samples, i.e. one
    more than the number of samples; it tracks filtering.  A pair whose
    samples were all removed keeps ``count == 1`` and an undefined (nan) mean.
    """

    def __init__(self, labels: Sequence[str], samples: Mapping[tuple[int, int], np.ndarray],
                 convention: str = END_TO_START):
        self.labels = tuple(labels)
        self.convention = convention
        self._samples: dict[tuple[int, int], np.ndarray] = {}
        for (i, j), x in sorted(samples.items()):
            if i >= j:
                raise ValueError(f"pair key must be canonical, got {(i, j)}")
            x = np.array(x, dtype=float)
            if x.size and not (x > 0).all():
                raise ValueError(f"non-positive inter-contact sample for pair {(i, j)}")
            self._samples[(i, j)] = _readonly(x)

    def __contains__(self, pair) -> bool:
        return tuple(sorted(pair)) in self._samples

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._samples)

    def __len__(self) -> int:
        return len(self._samples)

    def samples(self, pair) -> np.ndarray:
        return self._samples[tuple(sorted(pair))]

    def count(self, pair) -> int:
        return self.samples(pair).size + 1

    def mean(self, pair) -> float:
        x = self.samples(pair)
        return float(x.mean()) if x.size else math.nan

    def flagged(self) -> list[tuple[int, int]]:
        """Pairs whose mean is undefined (no samples)."""
        return [p for p, x in self._samples.items() if x.size == 0]

    def items(self):
        return self._samples.items()

    def __eq__(self, other):
        if not isinstance(other, InterContactTable):
            return NotImplemented
        return (self.labels == other.labels and self._samples.keys() == other._samples.keys()
                and all(np.array_equal(x, other._samples[p]) for p, x in self._samples.items()))

    __hash__ = None

    def __repr__(self):
        return f"InterContactTable(pairs={len(self)}, convention={self.convention!r})"


def extract_intercontacts(trace: ContactTrace, convention: str = END_TO_START) -> InterContactTable:
    """Per-pair gaps between successive contacts.

    ``end-to-start`` (default) measures the time without connectivity, from
    the end of one contact to the start of the next; ``start-to-start``
    measures between contact onsets.
    """
    if convention not in GAP_CONVENTIONS:
        raise ValueError(f"unknown gap convention {convention!r}")
    if not len(trace):
        return InterContactTable(trace.labels, {}, convention)
    order = np.lexsort((trace.start, trace.b, trace.a))
    a, b = trace.a[order], trace.b[order]
    s, e = trace.start[order], trace.end[order]
    new_pair = np.ones(a.size, dtype=bool)
    new_pair[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    firsts = np.flatnonzero(new_pair)
    prev_ref = e[:-1] if convention == END_TO_START else s[:-1]
    gaps = s[1:] - prev_ref
    out = {}
    bounds = list(firsts) + [a.size]
    for k in range(len(firsts)):
        lo, hi = bounds[k], bounds[k + 1]
        out[(int(a[lo]), int(b[lo]))] = gaps[lo:hi - 1]
    return InterContactTable(trace.labels, out, convention)


def filter_ping_pong(table: InterContactTable, threshold: float = PING_PONG_SECONDS) -> InterContactTable:
    """Drop every inter-contact sample below ``threshold`` seconds."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return InterContactTable(table.labels, {p: x[x >= threshold] for p, x in table.items()},
                             table.convention)


def eligible_pairs(table: InterContactTable, max_mean: float = WEEK_SECONDS,
                   min_contacts: int = MIN_CONTACTS) -> set[tuple[int, int]]:
    """Pairs with mean inter-contact time below ``max_mean`` and more than ``min_contacts`` contacts."""
    if max_mean <= 0 or min_contacts < 0:
        raise ValueError("max_mean must be positive and min_contacts non-negative")
    out = set()
    for p, x in table.items():
        if x.size and x.size + 1 > min_contacts and x.mean() < max_mean:
            out.add(p)
    return out


# --- CSV I/O ---------------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def read_records(source, schema: str = "contact") -> tuple[list, dict[str, str]]:
    """Parse a trace CSV into ``(line, x, y, start, end)`` records.

    Leading ``#`` lines are metadata (``# key=value``) and returned as a dict.
    """
    header = CONTACT_HEADER if schema == "contact" else SESSION_HEADER
    if schema not in ("contact", "session"):
        raise ValueError(f"unknown schema {schema!r}")
    fh, close = _open_text(source)
    try:
        meta: dict[str, str] = {}
        rows = []
        seen_header = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            fields = next(csv.reader([line]))
            if not seen_header:
                if tuple(f.strip() for f in fields) != header:
                    raise TraceFormatError(f"expected header {','.join(header)!r}", lineno)
                seen_header = True
                continue
            if len(fields) != 4:
                raise TraceFormatError(f"expected 4 fields, got {len(fields)}", lineno)
            x, y = fields[0].strip(), fields[1].strip()
            if not x or not y:
                raise TraceFormatError("empty node field", lineno)
            rows.append((lineno, x, y, fields[2].strip(), fields[3].strip()))
        return rows, meta
    finally:
        if close:
            fh.close()


def _meta_horizon(meta):
    if "horizon" not in meta:
        return None
    try:
        lo, hi = (float(v) for v in meta["horizon"].split(","))
    except ValueError:
        raise TraceFormatError(f"bad horizon metadata {meta['horizon']!r}") from None
    return (lo, hi)


def read_contact_csv(source, roster=None) -> ContactTrace:
    """Read a ``contact`` CSV; a ``# horizon=lo,hi`` metadata line sets the horizon."""
    rows, meta = read_records(source, "contact")
    return ingest_contact_trace(rows, roster=roster, horizon=_meta_horizon(meta))


def read_session_csv(source, roster=None) -> ContactTrace:
    rows, _ = read_records(source, "session")
    return sessions_to_contacts(rows, roster=roster)


def format_seconds(t: float) -> str:
    if math.isinf(t):
        return "inf"
    if float(t).is_integer() and abs(t) < 1e15:
        return str(int(t))
    return repr(float(t))


def write_contact_csv(trace: ContactTrace, dest: IO[str] | str,
                      metadata: Mapping[str, object] | None = None) -> None:
    fh, close = (open(dest, "w", newline="", encoding="utf-8"), True) if isinstance(dest, str) else (dest, False)
    try:
        meta = {"horizon": f"{format_seconds(trace.horizon[0])},{format_seconds(trace.horizon[1])}"}
        meta.update(metadata or {})
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(CONTACT_HEADER) + "\n")
        labels = trace.labels
        for i, j, s, e in zip(trace.a, trace.b, trace.start, trace.end):
            fh.write(f"{labels[i]},{labels[j]},{format_seconds(s)},{format_seconds(e)}\n")
    finally:
        if close:
            fh.close()


def write_intercontacts_csv(table: InterContactTable, dest: IO[str] | str,
                            include_samples: bool = False) -> None:
    """Emit ``i,j,count,mean_seconds`` (plus ``samples`` as ``;``-joined seconds)."""
    fh, close = (open(dest, "w", newline="", encoding="utf-8"), True) if isinstance(dest, str) else (dest, False)
    try:
        cols = ["i", "j", "count", "mean_seconds"] + (["samples"] if include_samples else [])
        fh.write(",".join(cols) + "\n")
        for (i, j), x in table.items():
            mean = repr(float(x.mean())) if x.size else "nan"
            row = [table.labels[i], table.labels[j], str(x.size + 1), mean]
            if include_samples:
                row.append(";".join(format_seconds(v) for v in x))
            fh.write(",".join(row) + "\n")
    finally:
        if close:
            fh.close()


def trace_to_csv_string(trace: ContactTrace, metadata=None) -> str:
    buf = io.StringIO()
    write_contact_csv(trace, buf, metadata)
    return buf.getvalue()
