"""Command-line front end.

Every subcommand prints its main document to stdout.  With ``--out-dir``
(or ``SCSQKD_OUTPUT_DIR``) it also writes the document, a delimited table
and, unless ``--no-plot``, a PNG figure into that directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
from pathlib import Path

from . import docio
from .calibration import read_calibration
from .channel import channel_from_dict, expected_count_table, simulate_count_table_mc
from .chernoff import LogFailureProb
from .feedback import ControllerConfig, DriftProcess, run_loop
from .model import (
    DegenerateDataError,
    DetectorMapping,
    InvariantError,
    ParseError,
    fixture_names,
    read_dataset,
)
from .optimize import RateModel, SearchBox, optimize_parameters
from .security import REPORT_UNITS, analyze, resolve_budget

OUTPUT_DIR_ENV = "SCSQKD_OUTPUT_DIR"

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_INVARIANT = 4
EXIT_DEGENERATE = 5
EXIT_CONFIG = 6


class ConfigError(Exception):
    pass


def _out_dir(args) -> Path | None:
    out = args.out_dir or os.environ.get(OUTPUT_DIR_ENV)
    if not out:
        return None
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _table(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _emit(args, stem: str, doc, rows: list[dict] | None = None) -> Path | None:
    text = _table(rows) if args.format == "csv" and rows is not None else docio.dumps(doc)
    sys.stdout.write(text)
    out = _out_dir(args)
    if out is not None:
        (out / f"{stem}.yaml").write_text(docio.dumps(doc), encoding="utf-8")
        if rows is not None:
            (out / f"{stem}.csv").write_text(_table(rows), encoding="utf-8")
    return out


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not field=value")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def apply_overrides(obj, overrides: dict, consumed: set | None = None):
    """Replace dataclass fields from ``name=value`` strings, checking types."""
    fields = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for k, raw in overrides.items():
        if k not in fields:
            continue
        current = getattr(obj, k)
        try:
            if isinstance(current, bool):
                val = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                f = float(raw)
                if not f.is_integer():
                    raise ValueError
                val = int(f)
            elif isinstance(current, float):
                val = float(raw)
            else:
                raise ConfigError(f"field {k} cannot be overridden")
        except ValueError:
            raise ConfigError(f"{k}={raw!r}: expected {type(current).__name__}") from None
        changes[k] = val
        if consumed is not None:
            consumed.add(k)
    return dataclasses.replace(obj, **changes) if changes else obj


def _check_consumed(overrides: dict, consumed: set):
    unknown = set(overrides) - consumed
    if unknown:
        raise ConfigError(f"unknown override field(s): {', '.join(sorted(unknown))}")


def _report_row(rep, ds=None) -> dict:
    t = rep.tally
    row = {
        "dataset": rep.name,
        "total_length_km": (ds.reference.get("total_length_km") if ds is not None else None),
        "n_windows": rep.params.n_windows,
        "n_o": t.n_o,
        "n_b": t.n_b,
        "n_z": t.n_z,
        "m_s": t.m_s,
        "e_z": t.e_z,
        "qber_both_send": t.qber_bb,
        "e_ph_bar": rep.e_ph_bar,
        "leak_ec_bits": rep.leak_ec,
        "r_col_per_window": rep.r_col,
        "r_coh_per_window": rep.r_coh,
        "r_coh_clamped_per_window": rep.r_coh_clamped,
        "r_bps": rep.r_bps,
        "log2_inv_eps_coh": rep.budget.log2_inv_eps_coh,
        "log2_inv_eps": rep.budget.log2_inv_eps,
    }
    if ds is not None and "r_per_window" in ds.reference:
        row["r_published_per_window"] = ds.reference["r_per_window"]
    return row


def _analyze_ds(ds, args, overrides=None, consumed=None):
    overrides = overrides or {}
    params = apply_overrides(ds.params, overrides, consumed)
    mapping = DetectorMapping(args.effective_channel, 1 - args.effective_channel)
    eps_coh = args.eps_coh if args.eps_coh is not None else ds.eps_coh
    if "eps_coh" in overrides:
        try:
            eps_coh = float(overrides["eps_coh"])
        except ValueError:
            raise ConfigError(f"eps_coh={overrides['eps_coh']!r}: expected float") from None
        if consumed is not None:
            consumed.add("eps_coh")
    eps = LogFailureProb.from_prob(eps_coh)
    return analyze(params, ds.counts, mapping, eps, ds.effective_rate_hz, ds.name)


def cmd_keyrate(args) -> int:
    names = args.data or ["paper_0km"]
    if names == ["all"]:
        names = fixture_names()
    overrides = _parse_overrides(args.set)
    consumed: set = set()
    reports, rows, datasets = [], [], []
    for name in names:
        ds = read_dataset(name)
        rep = _analyze_ds(ds, args, overrides, consumed)
        reports.append(rep)
        datasets.append(ds)
        rows.append(_report_row(rep, ds))
    _check_consumed(overrides, consumed)
    doc = reports[0].to_dict() if len(reports) == 1 else {"reports": [r.to_dict() for r in reports]}
    out = _emit(args, "keyrate", doc, rows)
    if out is not None and not args.no_plot and all(r["total_length_km"] is not None for r in rows):
        from .plotting import keyrate_comparison

        keyrate_comparison(rows, out / "keyrate.png")
    return EXIT_OK


def _channel_setup(args):
    """Dataset (for protocol parameters), channel and detectors."""
    ds = read_dataset(args.config)
    overrides = _parse_overrides(args.set)
    consumed: set = set()
    channel, detectors = channel_from_dict(ds.channel)
    for k, v in (("len_ac", args.len_ac), ("len_bc", args.len_bc)):
        if v is not None:
            channel = dataclasses.replace(channel, **{k: v})
    channel = apply_overrides(channel, overrides, consumed)
    params = apply_overrides(ds.params, overrides, consumed)
    _check_consumed(overrides, consumed)
    return ds, params, channel, detectors


def cmd_simulate(args) -> int:
    ds, params, channel, detectors = _channel_setup(args)
    if args.sweep:
        return _sweep(args, ds, params, channel, detectors)
    if args.mode == "mc":
        if args.seed is None:
            raise ConfigError("--seed is required for Monte Carlo runs")
        counts = simulate_count_table_mc(params, channel, detectors, args.windows, args.seed)
    else:
        counts = expected_count_table(params, channel, detectors, args.quadrature)
    sim = dataclasses.replace(
        ds,
        name=f"{ds.name}_sim_{args.mode}",
        params=dataclasses.replace(params, n_windows=counts.n_windows),
        counts=counts,
        channel={k: getattr(channel, k) for k in ("len_ac", "len_bc", "atten_db_per_km", "extra_loss_a_db", "extra_loss_b_db", "phase_sigma")},
        reference={},
    )
    doc = sim.to_dict()
    rows = [
        {"cell": f"{a}{b}", "sent": counts.sent[a][b], "detected_ch0": counts.detected[a][b][0], "detected_ch1": counts.detected[a][b][1]}
        for a in (0, 1)
        for b in (0, 1)
    ]
    if args.analyze:
        rep = analyze(sim.params, counts, eps_coh=LogFailureProb.from_prob(sim.eps_coh), effective_rate_hz=sim.effective_rate_hz, name=sim.name)
        doc = {"dataset": doc, "report": rep.to_dict()}
        rows = [_report_row(rep)]
    _emit(args, "simulate", doc, rows)
    return EXIT_OK


def _parse_range(spec: str) -> list[float]:
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ConfigError(f"sweep must be START:STOP:STEP, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise ConfigError("sweep needs STEP > 0 and STOP >= START")
    n = int(round((stop - start) / step))
    return [start + i * step for i in range(n + 1)]


def _sweep(args, ds, params, channel, detectors) -> int:
    rows = []
    for dist in _parse_range(args.sweep):
        ch = dataclasses.replace(channel, len_ac=dist / 2.0, len_bc=dist / 2.0)
        counts = expected_count_table(params, ch, detectors, args.quadrature)
        try:
            rep = analyze(params, counts, eps_coh=LogFailureProb.from_prob(ds.eps_coh), effective_rate_hz=ds.effective_rate_hz)
            r, e_ph, qber = rep.r_coh, rep.e_ph_bar, rep.tally.qber_bb
        except DegenerateDataError:
            r, e_ph, qber = float("-inf"), float("nan"), float("nan")
        rows.append(
            {
                "total_length_km": dist,
                "r_coh_per_window": r,
                "r_coh_clamped_per_window": max(r, 0.0),
                "r_bps": r * ds.effective_rate_hz,
                "e_ph_bar": e_ph,
                "qber_both_send": qber,
            }
        )
    budget = resolve_budget(params.n_windows, LogFailureProb.from_prob(ds.eps_coh), params.dimension_d)
    doc = {
        "schema": "scsqkd/sweep/v1",
        "base": ds.name,
        "params": params.to_dict(),
        "budget_log2_inv": budget.to_dict(),
        "units": {"total_length_km": "km", **REPORT_UNITS},
        "rows": rows,
    }
    out = _emit(args, "sweep", doc, rows)
    if out is not None and not args.no_plot:
        from .plotting import rate_vs_distance

        measured = [read_dataset(n).reference for n in fixture_names()]
        rate_vs_distance(rows, measured, out / "rate_vs_distance.png")
    return EXIT_OK


def cmd_phasesim(args) -> int:
    drift = DriftProcess(args.drift_rate, args.seed)
    kw = {"integration_window_us": args.window_us}
    for k in ("kp", "ki", "kd"):
        if getattr(args, k) is not None:
            kw[k] = getattr(args, k)
    controller = ControllerConfig.null_lock(**kw) if args.null_lock else ControllerConfig(**kw)
    modes = {"on": [True], "off": [False], "both": [True, False]}[args.feedback]
    traces, summaries = {}, {}
    for on in modes:
        label = "feedback on" if on else "feedback off"
        tr, summ = run_loop(drift, controller, duration_ms=args.duration_ms, feedback_on=on, seed=args.seed, ref_rate_mcps=args.ref_rate_mcps)
        traces[label] = tr
        summaries["on" if on else "off"] = summ.to_dict()
    doc = {
        "schema": "scsqkd/phasesim/v1",
        "seed": args.seed,
        "drift_rate_rad_per_sqrt_us": args.drift_rate,
        "ref_rate_mcps": args.ref_rate_mcps,
        "controller": dataclasses.asdict(controller),
        "summary": summaries,
    }
    sys.stdout.write(docio.dumps(doc))
    out = _out_dir(args)
    if out is not None:
        (out / "phasesim.yaml").write_text(docio.dumps(doc), encoding="utf-8")
        for label, tr in traces.items():
            stem = label.replace("feedback ", "trace_")
            (out / f"{stem}.csv").write_text(tr.to_csv(args.stride), encoding="utf-8")
        if not args.no_plot:
            from .plotting import phase_trace

            phase_trace(traces, out / "phase_trace.png")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    block = read_calibration(args.data)
    doc = block.to_dict()
    rows = []
    if block.extinction is not None:
        rows.append({"quantity": "extinction_ratio", "value": block.extinction.ratio_db, "unit": "dB"})
    if block.intensity is not None:
        rows.append({"quantity": "intensity_upper_bound", "value": 100.0 * block.intensity.mu_up_ratio, "unit": "% of mean"})
    if block.patterning is not None:
        rows.append({"quantity": "patterning_VS_vs_SS", "value": 100.0 * block.patterning.signal_difference, "unit": "%"})
        rows.append({"quantity": "patterning_SV_vs_VV", "value": 100.0 * block.patterning.vacuum_difference, "unit": "%"})
    out = _emit(args, "calibration", doc, rows)
    if out is not None and block.histogram:
        hist = [{"lower": lo, "upper": hi, "count": c} for lo, hi, c in block.histogram]
        (out / "intensity_histogram.csv").write_text(_table(hist), encoding="utf-8")
    return EXIT_OK


def _parse_box(items) -> SearchBox:
    box = SearchBox()
    for item in items or ():
        k, _, rng = item.partition("=")
        if k not in ("mu_a", "mu_b", "p_send"):
            raise ConfigError(f"unknown search axis {k!r}")
        try:
            lo, _, hi = rng.partition(":")
            lo = float(lo)
            hi = float(hi) if hi else lo
        except ValueError:
            raise ConfigError(f"bad range {item!r}, expected axis=LO:HI") from None
        try:
            box = dataclasses.replace(box, **{k: (lo, hi)})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return box


def cmd_optimize(args) -> int:
    ds, params, channel, detectors = _channel_setup(args)
    box = _parse_box(args.box)
    model = RateModel(channel, detectors, LogFailureProb.from_prob(ds.eps_coh), params.n_windows)
    baseline = (params.mu_a, params.mu_b, params.p_send)
    r_base = model.rate(*baseline)
    res = optimize_parameters(channel, detectors, model.eps_coh, box, seed=args.seed, start=baseline, grid=args.grid, model=model)
    doc = {
        "schema": "scsqkd/optimize/v1",
        "config": ds.name,
        "seed": args.seed,
        "baseline": {"mu_a": baseline[0], "mu_b": baseline[1], "p_send": baseline[2], "r_coh_per_window": r_base},
        "optimum": {"mu_a": res.point[0], "mu_b": res.point[1], "p_send": res.point[2], "r_coh_per_window": res.r_coh},
        "evaluations": res.evaluations,
        "budget_log2_inv": resolve_budget(params.n_windows, model.eps_coh, params.dimension_d).to_dict(),
        "units": dict(REPORT_UNITS),
    }
    rows = [
        {"point": "baseline", "mu_a": baseline[0], "mu_b": baseline[1], "p_send": baseline[2], "r_coh_per_window": r_base},
        {"point": "optimum", "mu_a": res.point[0], "mu_b": res.point[1], "p_send": res.point[2], "r_coh_per_window": res.r_coh},
    ]
    _emit(args, "optimize", doc, rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scsqkd", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=None, help=f"directory for output files (default ${OUTPUT_DIR_ENV})")
    common.add_argument("--format", choices=("yaml", "csv"), default="yaml", help="stdout format")
    common.add_argument("--no-plot", action="store_true", help="skip figures")
    sub = p.add_subparsers(dest="cmd", required=True)

    k = sub.add_parser("keyrate", parents=[common], help="key rate from a count table")
    k.add_argument("--data", action="append", help="dataset file or fixture name; repeatable; 'all' for every fixture")
    k.add_argument("--effective-channel", type=int, choices=(0, 1), default=0)
    k.add_argument("--eps-coh", type=float, default=None)
    k.add_argument("--set", action="append", metavar="FIELD=VALUE", help="override a protocol parameter")
    k.set_defaults(func=cmd_keyrate)

    s = sub.add_parser("simulate", parents=[common], help="simulate a count table")
    s.add_argument("--config", default="paper_50p5km", help="dataset whose protocol and channel sections are used")
    s.add_argument("--len-ac", type=float, default=None)
    s.add_argument("--len-bc", type=float, default=None)
    s.add_argument("--mode", choices=("analytic", "mc"), default="analytic")
    s.add_argument("--windows", type=int, default=10_000_000, help="Monte Carlo windows")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--quadrature", type=int, default=32)
    s.add_argument("--analyze", action="store_true", help="chain into the key-rate analysis")
    s.add_argument("--sweep", default=None, metavar="START:STOP:STEP", help="symmetric total-length sweep in km")
    s.add_argument("--set", action="append", metavar="FIELD=VALUE", help="override a protocol or channel field")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("phasesim", parents=[common], help="phase drift and feedback loop")
    f.add_argument("--feedback", choices=("on", "off", "both"), default="on")
    f.add_argument("--duration-ms", type=float, default=200.0)
    f.add_argument("--drift-rate", type=float, default=0.0168, help="rad per sqrt(us)")
    f.add_argument("--window-us", type=int, default=4)
    f.add_argument("--ref-rate-mcps", type=float, default=2.5)
    f.add_argument("--kp", type=float, default=None)
    f.add_argument("--ki", type=float, default=None)
    f.add_argument("--kd", type=float, default=None)
    f.add_argument("--null-lock", action="store_true", help="lock R to 1 instead of quadrature")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--stride", type=int, default=1, help="write every n-th microsecond of the trace")
    f.set_defaults(func=cmd_phasesim)

    c = sub.add_parser("calibrate", parents=[common], help="extinction ratio, intensity bound, patterning")
    c.add_argument("--data", default="paper_calibration")
    c.set_defaults(func=cmd_calibrate)

    o = sub.add_parser("optimize", parents=[common], help="optimise intensities and sending probability")
    o.add_argument("--config", default="paper_50p5km")
    o.add_argument("--len-ac", type=float, default=None)
    o.add_argument("--len-bc", type=float, default=None)
    o.add_argument("--box", action="append", metavar="AXIS=LO:HI", help="search range for mu_a, mu_b or p_send")
    o.add_argument("--grid", type=int, default=5)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--set", action="append", metavar="FIELD=VALUE")
    o.set_defaults(func=cmd_optimize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvariantError as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except DegenerateDataError as exc:
        print(f"error: degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
