"""Command-line front end: ``tdtn {ingest,fit,analyze,synth,simulate}``.

Settings resolve as CLI flag > ``--config`` file (flat ``key=value``, keys
named like the long flags without dashes) > built-in defaults.  Exit codes:
0 success, 1 runtime failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import Sequence


from . import rate_model, replay_sim, stat_fit, synth_gen, trace_core
from .rate_model import DelayQuery, RateMatrix
from .trace_core import TraceFormatError

log = logging.getLogger("tdtn")

DEFAULTS = {
    "format": "contact",
    "pingpong_seconds": trace_core.PING_PONG_SECONDS,
    "pingpong_mode": "drop",
    "gap": trace_core.END_TO_START,
    "max_mean_seconds": trace_core.WEEK_SECONDS,
    "min_contacts": trace_core.MIN_CONTACTS,
    "significance": stat_fit.DEFAULT_SIGNIFICANCE,
    "alpha": synth_gen.DEFAULT_ALPHA,
    "b": synth_gen.DEFAULT_B,
    "nodes": 50,
    "horizon_seconds": 45 * 86400.0,
    "contact_duration": 0.0,
    "seed": 0,
    "strategies": ",".join(replay_sim.STRATEGIES),
    "random_queries": 100,
}

ANALYZE_STRATEGIES = ("wait", "med", "one_sw", "one_sw_modified", "one_sw_star")


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


def read_config(path: str) -> dict[str, str]:
    cfg = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InputError(f"{path}: line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def _resolve(args: argparse.Namespace, keys: Sequence[str]) -> None:
    """Fill unset flags from the config file, then the defaults."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for k in keys:
        if getattr(args, k, None) is not None:
            continue
        default = DEFAULTS.get(k)
        if k in cfg:
            raw = cfg[k]
            try:
                val = type(default)(raw) if default is not None and not isinstance(default, str) else raw
            except ValueError:
                raise InputError(f"config value {k}={raw!r} is not a valid {type(default).__name__}") from None
        else:
            val = default
        setattr(args, k, val)


def _require_file(path: str | None, what: str) -> str:
    if not path:
        raise InputError(f"missing {what} (--input)")
    if not os.path.isfile(path):
        raise InputError(f"{what} not found: {path}")
    return path


def _open_out(path: str | None):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _load_trace(path: str, fmt: str):
    if fmt == "contact":
        return trace_core.read_contact_csv(path)
    if fmt == "session":
        return trace_core.read_session_csv(path)
    raise InputError(f"unknown format {fmt!r}")


# --- ingest --------------------------------------------------------------------

def cmd_ingest(args) -> int:
    _resolve(args, ["format"])
    trace = _load_trace(_require_file(args.input, "input trace"), args.format)
    out, close = _open_out(args.output)
    try:
        trace_core.write_contact_csv(trace, out)
    finally:
        if close:
            out.close()
    if args.intercontacts:
        table = trace_core.extract_intercontacts(trace)
        with open(args.intercontacts, "w", encoding="utf-8", newline="") as fh:
            trace_core.write_intercontacts_csv(table, fh, include_samples=args.samples)
    log.info("ingested %d nodes, %d contacts", trace.n, len(trace))
    return 0


# --- fit -----------------------------------------------------------------------

def _filtered_table(trace, args):
    if args.pingpong_mode == "merge":
        trace = trace_core.merge_ping_pong(trace, args.pingpong_seconds)
        return trace_core.extract_intercontacts(trace, args.gap)
    if args.pingpong_mode != "drop":
        raise InputError(f"unknown ping-pong mode {args.pingpong_mode!r}")
    return trace_core.filter_ping_pong(trace_core.extract_intercontacts(trace, args.gap), args.pingpong_seconds)


def run_fit(trace, args):
    table = _filtered_table(trace, args)
    pairs = trace_core.eligible_pairs(table, args.max_mean_seconds, args.min_contacts)
    verdicts = stat_fit.classify_table(table, pairs, significance=args.significance,
                                       min_contacts=args.min_contacts, max_mean=args.max_mean_seconds)
    summary = stat_fit.summarize(table, verdicts)
    summary.notes.append(f"{len(table)} pairs with contacts, {len(pairs)} eligible")
    return table, verdicts, summary


def cmd_fit(args) -> int:
    _resolve(args, ["format", "pingpong_seconds", "pingpong_mode", "gap", "max_mean_seconds",
                    "min_contacts", "significance"])
    trace = _load_trace(_require_file(args.input, "input trace"), args.format)
    table, verdicts, summary = run_fit(trace, args)
    labels = trace.labels
    prefix = args.output or "fit"
    with open(prefix + ".verdicts.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("i,j,N,lambda,omega2_exp,omega2_pl,classification\n")
        for (i, j), v in sorted(verdicts.items()):
            fh.write(f"{labels[i]},{labels[j]},{v.n},{float(v.rate)!r},{float(v.omega2_exponential)!r},"
                     f"{float(v.omega2_powerlaw)!r},{v.classification}\n")
    with open(prefix + ".summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary.as_dict(), fh, indent=2, default=float)
        fh.write("\n")
    # Rates of every pair observed in the filtered data, for analyze/simulate.
    with open(prefix + ".rates.csv", "w", encoding="utf-8", newline="") as fh:
        rate_model.write_rates_csv(rate_model.rates_from_table(table), fh)

    pct = summary.percentages()
    print(f"eligible pairs: {summary.eligible}")
    for cls in stat_fit.Classification:
        print(f"  {cls.value:<18} {summary.counts[cls.value]:>7d}  {pct[cls.value]:6.2f}%")
    n_exp = summary.counts["exponential"] + summary.counts["both"]
    print(f"  {'accepts exponential':<18} {n_exp:>7d}  {pct['exponential'] + pct['both']:6.2f}%")
    d = summary.as_dict()
    fmt = lambda x: "nan" if x is None else f"{x:.6g}"  # noqa: E731
    print(f"summary: alpha={fmt(d['alpha'])} b={fmt(d['b'])} c={fmt(d['c'])} delta={fmt(d['delta'])}")
    return 0


# --- analyze -------------------------------------------------------------------

def _load_rates(args) -> RateMatrix:
    if args.rates:
        return rate_model.read_rates_csv(_require_file(args.rates, "rate file"))
    if args.input:
        trace = _load_trace(_require_file(args.input, "input trace"), args.format)
        return rate_model.rates_from_table(_filtered_table(trace, args))
    raise InputError("need --rates or --input")


def _parse_queries(spec: str | None, labels: Sequence[str]) -> list[DelayQuery]:
    """Queries as ``s:d`` tokens separated by commas, or a file of ``s,d`` lines."""
    ids = {lab: i for i, lab in enumerate(labels)}
    if spec is None:
        return []
    if os.path.isfile(spec):
        with open(spec, encoding="utf-8") as fh:
            tokens = [ln.strip().replace(",", ":") for ln in fh
                      if ln.strip() and not ln.startswith("#") and ln.strip() != "s,d"]
    else:
        tokens = [t for t in spec.split(",") if t]
    out = []
    for tok in tokens:
        parts = tok.split(":")
        if len(parts) != 2:
            raise InputError(f"bad query {tok!r}; expected s:d")
        s, d = (p.strip() for p in parts)
        if s not in ids or d not in ids:
            raise InputError(f"query {tok!r} names an unknown node")
        if s == d:
            raise InputError(f"query {tok!r} has source == destination")
        out.append(DelayQuery(ids[s], ids[d]))
    return out


def _draw_queries(n: int, count: int, seed: int) -> list[DelayQuery]:
    if n < 2:
        raise InputError("need at least two nodes to draw queries")
    rng = synth_gen.pair_rng(seed, synth_gen.QUERY_STREAM, 0, 0)
    count = min(count, n * (n - 1))
    return replay_sim.random_queries(n, count, rng)


def analyze_rows(m: RateMatrix, queries, strategies, relays=None):
    labels = m.labels
    for q in queries:
        for kind in strategies:
            detail = ""
            if kind == "wait":
                val = rate_model.wait_delay(m, q)
                detail = f"{labels[q.s]}>{labels[q.d]}" if math.isfinite(val) else ""
            elif kind == "med":
                pd = rate_model.med_path(m, q)
                val, detail = pd.expected_delay, ">".join(labels[v] for v in pd.path)
            elif kind == "one_sw":
                val = rate_model.one_sw_delay(m, q)
                detail = "all"
            elif kind == "one_sw_modified":
                rs = rate_model.eligible_relays(m, q)
                val = rate_model.one_sw_subset_delay(m, q, rs)
                detail = ";".join(labels[v] for v in rs)
            elif kind == "one_sw_star":
                sol = rate_model.one_sw_star(m, q)
                val, detail = sol.expected_delay, ";".join(labels[v] for v in sorted(sol.relay_set))
            else:
                raise InputError(f"unknown strategy {kind!r}")
            yield q, kind, val, detail
        if relays is not None:
            rs = [v for v in relays if v != q.s]
            yield q, "one_sw_r", rate_model.one_sw_subset_delay(m, q, rs), ";".join(labels[v] for v in rs)


def cmd_analyze(args) -> int:
    _resolve(args, ["format", "pingpong_seconds", "pingpong_mode", "gap", "seed", "random_queries"])
    m = _load_rates(args)
    queries = _parse_queries(args.queries, m.labels) or _draw_queries(m.n, args.random_queries, args.seed)
    strategies = [s.strip() for s in (args.strategies or ",".join(ANALYZE_STRATEGIES)).split(",") if s.strip()]
    for s in strategies:
        if s not in ANALYZE_STRATEGIES:
            raise InputError(f"unknown strategy {s!r}; choose from {','.join(ANALYZE_STRATEGIES)}")
    relays = None
    if args.relays is not None:
        ids = m.index()
        try:
            relays = [ids[r.strip()] for r in args.relays.split(",") if r.strip()]
        except KeyError as exc:
            raise InputError(f"unknown relay {exc.args[0]!r}") from None
    out, close = _open_out(args.output)
    try:
        out.write("s,d,strategy,expected_delay_seconds,path_or_relayset\n")
        for q, kind, val, detail in analyze_rows(m, queries, strategies, relays):
            out.write(f"{m.labels[q.s]},{m.labels[q.d]},{kind},{trace_core.format_seconds(val) if math.isinf(val) else repr(float(val))},{detail}\n")
    finally:
        if close:
            out.close()
    return 0


# --- synth ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = read_config(args.config) if args.config else {}
    _resolve(args, ["nodes", "alpha", "b", "horizon_seconds", "seed", "contact_duration"])
    if args.rate is None and "rate" in cfg:
        args.rate = float(cfg["rate"])
    try:
        source = float(args.rate) if args.rate is not None else synth_gen.GammaRates(args.alpha, args.b)
        spec = synth_gen.SynthSpec(n=int(args.nodes), rate_source=source, horizon=args.horizon_seconds,
                                   seed=int(args.seed), contact_duration=args.contact_duration)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    m, trace = synth_gen.generate(spec)
    meta = {"generator": "tdtn.synth_gen", "nodes": spec.n, "seed": spec.seed,
            "horizon_seconds": trace_core.format_seconds(spec.horizon),
            "contact_duration": trace_core.format_seconds(spec.contact_duration)}
    if isinstance(source, synth_gen.GammaRates):
        meta.update(rate_source="gamma", alpha=source.alpha, b=source.b)
    else:
        meta.update(rate_source="constant", rate=source)
    out, close = _open_out(args.output)
    try:
        trace_core.write_contact_csv(trace, out, meta)
    finally:
        if close:
            out.close()
    if args.rates_output:
        with open(args.rates_output, "w", encoding="utf-8", newline="") as fh:
            rate_model.write_rates_csv(m, fh)
    return 0


# --- simulate ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    _resolve(args, ["format", "pingpong_seconds", "pingpong_mode", "gap", "seed", "strategies",
                    "random_queries"])
    trace = _load_trace(_require_file(args.input, "input trace"), args.format)
    if args.rates:
        m = rate_model.read_rates_csv(_require_file(args.rates, "rate file"), labels=trace.labels)
    else:
        # Rates from a prior pass over the ping-pong-filtered trace; with
        # --estimate-until only contacts before that instant are used.
        source = trace
        if args.estimate_until is not None:
            keep = trace.start < args.estimate_until
            source = trace_core.ContactTrace.from_arrays(trace.labels, trace.a[keep], trace.b[keep],
                                                         trace.start[keep], trace.end[keep],
                                                         horizon=trace.horizon)
        m = rate_model.rates_from_table(_filtered_table(source, args))
    replayed = trace_core.merge_ping_pong(trace, args.pingpong_seconds) if args.replay_filtered else trace
    queries = _parse_queries(args.queries, trace.labels) or _draw_queries(trace.n, args.random_queries, args.seed)
    kinds = [s.strip() for s in args.strategies.split(",") if s.strip()]
    try:
        configs = [replay_sim.StrategyConfig(k, m) for k in kinds]
    except ValueError as exc:
        raise InputError(str(exc)) from None
    report = replay_sim.run_strategies(replayed, queries, configs)
    prefix = args.output or "simulation"
    with open(prefix + ".summary.csv", "w", encoding="utf-8", newline="") as fh:
        replay_sim.write_summary_csv(report, fh)
    with open(prefix + ".bundles.csv", "w", encoding="utf-8", newline="") as fh:
        replay_sim.write_bundles_csv(report, fh, trace.labels)
    print(replay_sim.format_table(report))
    return 0


# --- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdtn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trace_input=True):
        sp.add_argument("--config", help="flat key=value settings file")
        sp.add_argument("--input", help="input trace CSV" if trace_input else "input file")
        sp.add_argument("--output", help="output file or prefix")
        sp.add_argument("--format", choices=("contact", "session"))
        sp.add_argument("--seed", type=int)

    def filtering(sp):
        sp.add_argument("--pingpong-seconds", dest="pingpong_seconds", type=float)
        sp.add_argument("--pingpong-mode", dest="pingpong_mode", choices=("drop", "merge"))
        sp.add_argument("--gap", choices=trace_core.GAP_CONVENTIONS)

    sp = sub.add_parser("ingest", help="canonicalise a contact or session trace")
    common(sp)
    sp.add_argument("--intercontacts", help="also write the inter-contact table here")
    sp.add_argument("--samples", action="store_true", help="include per-sample dump")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("fit", help="classify pairs and fit the gamma / power-law laws")
    common(sp)
    filtering(sp)
    sp.add_argument("--max-mean-seconds", dest="max_mean_seconds", type=float)
    sp.add_argument("--min-contacts", dest="min_contacts", type=int)
    sp.add_argument("--significance", type=float)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("analyze", help="closed-form expected delays per query")
    common(sp)
    filtering(sp)
    sp.add_argument("--rates", help="rate file (i,j,lambda_per_second)")
    sp.add_argument("--strategies", help=",".join(ANALYZE_STRATEGIES))
    sp.add_argument("--relays", help="explicit relay set for an extra one_sw_r row")
    sp.add_argument("--queries", help="s:d,s:d,... or a file of s,d lines")
    sp.add_argument("--random-queries", dest="random_queries", type=int)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("synth", help="generate a synthetic exponential t-DTN trace")
    common(sp)
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--b", type=float)
    sp.add_argument("--rate", type=float, help="constant rate for every pair instead of gamma rates")
    sp.add_argument("--horizon-seconds", dest="horizon_seconds", type=float)
    sp.add_argument("--contact-duration", dest="contact_duration", type=float)
    sp.add_argument("--rates-output", dest="rates_output", help="also write the true rate matrix")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("simulate", help="replay routing strategies over a trace")
    common(sp)
    filtering(sp)
    sp.add_argument("--rates", help="rate file; default: estimated from the filtered trace")
    sp.add_argument("--strategies", help=",".join(replay_sim.STRATEGIES))
    sp.add_argument("--queries", help="s:d,s:d,... or a file of s,d lines")
    sp.add_argument("--random-queries", dest="random_queries", type=int)
    sp.add_argument("--estimate-until", dest="estimate_until", type=float,
                    help="estimate rates only from contacts starting before this time")
    sp.add_argument("--replay-filtered", dest="replay_filtered", action="store_true",
                    help="replay the ping-pong-merged trace instead of the original")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, TraceFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
