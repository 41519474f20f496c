"""Command-line pipeline: synthesize, verify, simulate and sweep.

    passnet synth|verify|simulate|sweep --config run.json [--rbar V] [--out DIR]
                                        [--allow-unverified]

Exit status: 0 success, 2 synthesis infeasible, 3 verification failure,
4 configuration error, 1 any other failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, InfeasibleError, PassnetError, TopologyError
from .sim import (CsvTable, apply_change, event_metrics, simulate, summarize, write_csv,
                  write_table)
from .synthesis import SynthesisResult, build_cost_certificate, retune, synthesize_node
from .verify import DissipationMonitor, VerificationReport, verify_network, verify_retune

__all__ = ["main", "build_parser", "synthesize_all", "verify_all", "run_simulation",
           "results_to_json", "results_from_json"]

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_UNVERIFIED, EXIT_CONFIG = 0, 1, 2, 3, 4

DISSIPATION_TOL = 1e-4
CERT_FILE = "certificates.json"


class VerificationFailed(PassnetError):
    def __init__(self, report):
        super().__init__("verification failed: " + "; ".join(c.name for c in report.failures()))
        self.report = report


# -- certificates ----------------------------------------------------------------

def _key(node) -> str:
    return str(node)


def _fingerprint(system) -> list:
    return [system.A.tolist(), system.Bu.tolist(), system.Bw.tolist(), system.C.tolist()]


def results_to_json(results: dict, cfg: RunConfig) -> dict:
    nodes = {}
    for node, r in results.items():
        nodes[_key(node)] = dict(
            system=_fingerprint(cfg.model.node_systems[node]),
            Y=r.Y.tolist(), P=r.P.tolist(), s=r.s, R=r.R.tolist(), K=r.K.tolist(),
            Gamma=r.Gamma.tolist(), Gamma_inv=r.Gamma_inv.tolist(), Bu=r.Bu.tolist(),
            margins={k: float(v) for k, v in r.margins.items()}, status=r.status)
    opts = cfg.options
    return dict(synthesis=dict(**{"lambda": opts.lam}, epsilon=opts.epsilon,
                               s_min=opts.s_min, s_max=opts.s_max),
                nodes=nodes)


def results_from_json(doc: dict, cfg: RunConfig) -> dict:
    out = {}
    stored = doc.get("nodes", {})
    for node in cfg.model.controlled_nodes:
        d = stored.get(_key(node))
        if d is None:
            raise ConfigError(f"certificate file has no entry for node {node!r}")
        arr = {k: np.array(d[k], dtype=float) for k in ("Y", "P", "R", "Gamma", "Gamma_inv", "Bu")}
        out[node] = SynthesisResult(arr["Y"], arr["P"], float(d["s"]), arr["R"], arr["Gamma"],
                                    arr["Gamma_inv"], arr["Bu"], d.get("margins", {}),
                                    d.get("status", "optimal"))
    return out


def synthesize_all(cfg: RunConfig) -> dict:
    """Per-node synthesis; identical node systems are solved once."""
    results, cache = {}, {}
    for node in cfg.model.controlled_nodes:
        system = cfg.model.node_systems[node]
        key = repr(_fingerprint(system))
        if key not in cache:
            try:
                cache[key] = synthesize_node(system, cfg.options)
            except InfeasibleError as exc:
                raise InfeasibleError(f"node {node!r}: {exc}", constraint=exc.constraint) from None
        results[node] = cache[key]
    return results


def _load_or_synthesize(cfg: RunConfig, out: Path):
    """Reuse ``out/certificates.json`` when it matches the configured nodes and options."""
    path = out / CERT_FILE
    if path.exists():
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid certificate file {path}: {exc}") from None
        if doc.get("synthesis") == results_to_json({}, cfg)["synthesis"] and all(
                doc.get("nodes", {}).get(_key(n), {}).get("system") == _fingerprint(cfg.model.node_systems[n])
                for n in cfg.model.controlled_nodes):
            return results_from_json(doc, cfg), False
    return synthesize_all(cfg), True


# -- verification -----------------------------------------------------------------

def epoch_models(cfg: RunConfig) -> list:
    """Initial model followed by the model after each topology event."""
    models = [cfg.model]
    current = cfg.model
    for ev in cfg.schedule:
        try:
            current = apply_change(current, ev.change)
        except TopologyError as exc:
            raise ConfigError(f"event at t={ev.t}: {exc}") from None
        if ev.changes_topology:
            models.append(current)
    return models


def verify_all(cfg: RunConfig, results: dict, rbars=()) -> VerificationReport:
    """Certificate checks for every topology epoch plus tuning checks per ``rbars``."""
    report = VerificationReport()
    for k, m in enumerate(epoch_models(cfg)):
        cert = build_cost_certificate(m, results)
        verify_network(m, results, cert, tag=f"epoch {k}", report=report)
    for rb in rbars:
        verify_retune(cfg.model, results, rb, tag=f"rbar {rb:g}", report=report)
    return report


# -- simulation -------------------------------------------------------------------

def gains_for(results: dict, rbar=None) -> dict:
    if rbar is None:
        return {n: r.K for n, r in results.items()}
    return {n: retune(r, rbar).K for n, r in results.items()}


def _certificates_for_monitor(cfg: RunConfig, results: dict):
    node_certs = {n: r.certificate for n, r in results.items()}
    edge_certs = {}
    for m in epoch_models(cfg):
        for n, params in m.node_params.items():
            if n not in node_certs and hasattr(params, "certificate"):
                node_certs[n] = params.certificate()
        for pair, params in zip(m.graph.edges, m.edge_params):
            if params is not None and pair not in edge_certs:
                edge_certs[pair] = params.certificate()
    return node_certs, edge_certs


def run_simulation(cfg: RunConfig, results: dict, rbar=None):
    """Run the configured scenario; returns ``(trajectory, dissipation monitor)``."""
    monitor = DissipationMonitor(*_certificates_for_monitor(cfg, results))
    try:
        traj = simulate(cfg.model, gains_for(results, rbar), schedule=cfg.schedule, dt=cfg.dt,
                        t_end=cfg.t_end, method=cfg.method, record_every=cfg.record_every,
                        on_chunk=monitor)
    except TopologyError as exc:
        raise ConfigError(str(exc)) from None
    return traj, monitor


def _voltage_labels(cfg: RunConfig) -> list:
    return [f"v[{n}]" for n in cfg.dgu_nodes]


def _metric_rows(metrics, rbar):
    return [[rbar, m.event_time, m.step, m.settling_time, m.peak_deviation, m.overshoot, m.final_error]
            for m in metrics]


_METRIC_HEADER = ["rbar", "event_time", "step", "settling_time", "peak_deviation", "overshoot",
                  "final_error"]


def _write_metrics(path, rows_by_label):
    """Metrics CSV; the signal label is stored as a separate string column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", *_METRIC_HEADER])
        for label, row in rows_by_label:
            w.writerow([label, *("" if isinstance(v, float) and np.isnan(v) else repr(float(v))
                                 for v in row)])


# -- plotting ---------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "passnet"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def plot_voltages(path, curves, title):
    """``curves``: list of ``(axis_title, [(legend, t, v), ...])``, one axis each."""
    plt = _pyplot()
    fig, axes = plt.subplots(len(curves), 1, figsize=(7.0, 2.4 * len(curves)), sharex=True,
                             squeeze=False)
    for ax, (name, series) in zip(axes[:, 0], curves):
        for legend, t, v in series:
            ax.plot(t, v, lw=0.9, label=legend)
        ax.set_ylabel("voltage [V]")
        ax.set_title(name, fontsize=9)
        ax.grid(True, lw=0.3)
        ax.legend(fontsize=7, loc="best")
    axes[-1, 0].set_xlabel("time [s]")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- commands ---------------------------------------------------------------------

def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"not serializable: {type(v)}")


def _log(msg):
    print(msg, file=sys.stderr)


def cmd_synth(cfg: RunConfig, out: Path, args) -> int:
    results = synthesize_all(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.raw)
    _write_json(out / CERT_FILE, results_to_json(results, cfg))
    for node, r in results.items():
        print(f"node {node}: R = {r.R_scalar:.6g}, s = {r.s:.6g}")
    return EXIT_OK


def _verified(cfg, out, results, rbars, args):
    report = verify_all(cfg, results, rbars)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    if not report.passed:
        for c in report.failures():
            _log(f"FAIL {c.name}: {c.value:.3e} (tol {c.tol:.1e}) {c.detail}")
        if not args.allow_unverified:
            raise VerificationFailed(report)
        _log("continuing with unverified controllers (--allow-unverified)")
    return report


def cmd_verify(cfg: RunConfig, out: Path, args) -> int:
    results, fresh = _load_or_synthesize(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    if fresh:
        _write_json(out / CERT_FILE, results_to_json(results, cfg))
    rbars = [args.rbar] if args.rbar is not None else list(cfg.rbar)
    report = verify_all(cfg, results, rbars)
    _write_json(out / "report.json", report.to_dict())
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (tol {c.tol:.1e})")
    return EXIT_OK if report.passed else EXIT_UNVERIFIED


def _check_dissipation(monitor, args):
    worst = monitor.worst_normalized
    ok = worst >= -DISSIPATION_TOL
    if not ok:
        _log(f"FAIL trajectory dissipation margin {worst:.3e} < -{DISSIPATION_TOL:g}")
        if not args.allow_unverified:
            report = VerificationReport()
            report.add("trajectory dissipation margin", -worst, DISSIPATION_TOL)
            raise VerificationFailed(report)
    return worst


def _simulate_one(cfg, results, rbar):
    traj, monitor = run_simulation(cfg, results, rbar)
    metrics = event_metrics(traj, _voltage_labels(cfg))
    return traj, monitor, metrics


def cmd_simulate(cfg: RunConfig, out: Path, args) -> int:
    results, _ = _load_or_synthesize(cfg, out)
    _verified(cfg, out, results, [] if args.rbar is None else [args.rbar], args)
    traj, monitor, metrics = _simulate_one(cfg, results, args.rbar)
    worst = _check_dissipation(monitor, args)
    write_csv(traj, out, "trajectory")
    rbar = np.nan if args.rbar is None else args.rbar
    _write_metrics(out / "metrics.csv", [(m.label, row) for m, row in zip(metrics, _metric_rows(metrics, rbar))])
    label = "synthesized R" if args.rbar is None else f"R_bar = {args.rbar:g}"
    curves = [("DGU bus voltages", [(lab, *traj.series(lab)) for lab in _voltage_labels(cfg)])]
    plot_voltages(out / "voltages.svg", curves, label)
    _write_json(out / "simulation.json", dict(rbar=args.rbar, summary=summarize(metrics),
                                              min_dissipation_margin=worst,
                                              epochs=traj.epochs, samples=int(len(traj.t))))
    s = summarize(metrics)
    print(f"settling {s['settling_time']:.4g} s, peak deviation {s['peak_deviation']:.4g} V, "
          f"min dissipation margin {worst:.3e}")
    return EXIT_OK


def _sweep_worker(job):
    cfg, results, rbar = job
    traj, monitor, metrics = _simulate_one(cfg, results, rbar)
    return rbar, traj, monitor.worst_normalized, metrics


def sweep_pairs(summaries: dict) -> list:
    """Compare consecutive R_bar values in decreasing order."""
    order = sorted(summaries, reverse=True)
    out = []
    for hi, lo in zip(order, order[1:]):
        a, b = summaries[hi], summaries[lo]
        out.append(dict(rbar_from=hi, rbar_to=lo,
                        settling_decreases=bool(b["settling_time"] < a["settling_time"]),
                        overshoot_increases=bool(b["overshoot"] > a["overshoot"]),
                        peak_increases=bool(b["peak_deviation"] > a["peak_deviation"])))
    return out


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    rbars = list(args.rbar_list) if args.rbar_list else list(cfg.rbar)
    results, _ = _load_or_synthesize(cfg, out)
    _verified(cfg, out, results, rbars, args)
    jobs = [(cfg, results, rb) for rb in rbars]
    workers = cfg.workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_sweep_worker, jobs))
    else:
        runs = [_sweep_worker(j) for j in jobs]

    out.mkdir(parents=True, exist_ok=True)
    labels = []
    for _, traj, _, _ in runs:
        for seg in traj.segments:
            for lab in (*seg.state_labels, *seg.input_labels):
                if lab not in labels:
                    labels.append(lab)
    blocks, metric_rows, summaries, margins = [], [], {}, {}
    for rb, traj, worst, metrics in runs:
        if worst < -DISSIPATION_TOL and not args.allow_unverified:
            r = VerificationReport()
            r.add(f"trajectory dissipation margin [rbar {rb:g}]", -worst, DISSIPATION_TOL)
            raise VerificationFailed(r)
        margins[rb] = worst
        for seg in traj.segments:
            block = np.full((len(seg.t), len(labels) + 3), np.nan)
            block[:, 0] = rb
            block[:, 1] = seg.t
            block[:, 2] = seg.epoch
            cols = np.column_stack([seg.x, seg.u])
            for k, lab in enumerate((*seg.state_labels, *seg.input_labels)):
                block[:, 3 + labels.index(lab)] = cols[:, k]
            blocks.append(block)
        metric_rows += [(m.label, row) for m, row in zip(metrics, _metric_rows(metrics, rb))]
        summaries[rb] = summarize(metrics)
    write_table(out / "sweep.csv", CsvTable(["rbar", "time", "epoch", *labels], np.concatenate(blocks)))
    _write_metrics(out / "sweep_metrics.csv", metric_rows)
    curves = []
    for lab in _voltage_labels(cfg):
        curves.append((lab, [(f"R_bar = {rb:g}", *traj.series(lab)) for rb, traj, _, _ in runs]))
    plot_voltages(out / "sweep_voltages.svg", curves, "R_bar sweep")
    summary = dict(rbar=rbars, summaries={f"{rb:g}": summaries[rb] for rb in rbars},
                   min_dissipation_margin={f"{rb:g}": margins[rb] for rb in rbars},
                   pairs=sweep_pairs(summaries))
    _write_json(out / "sweep_summary.json", summary)
    print(f"{'rbar':>8} {'settling[s]':>12} {'peak[V]':>9} {'overshoot':>10}")
    for rb in rbars:
        s = summaries[rb]
        print(f"{rb:8g} {s['settling_time']:12.5f} {s['peak_deviation']:9.4f} {s['overshoot']:10.4f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "verify": cmd_verify, "simulate": cmd_simulate, "sweep": cmd_sweep}


def _rbar_list(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid R_bar value {text!r}") from None
    if not vals or not all(np.isfinite(v) and v > 0 for v in vals):
        raise argparse.ArgumentTypeError("R_bar values must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="passnet", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--rbar", type=_rbar_list, default=None,
                    help="control weight override (comma-separated list for sweep)")
    ap.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    ap.add_argument("--allow-unverified", action="store_true",
                    help="continue past failed verification checks")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    args.rbar_list = args.rbar
    if args.rbar is not None:
        if args.command != "sweep" and len(args.rbar) != 1:
            _log("error: --rbar takes a single value for this command")
            return EXIT_CONFIG
        args.rbar = args.rbar[0] if len(args.rbar) == 1 else None
    try:
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else cfg.out_dir
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except InfeasibleError as exc:
        _log(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    except VerificationFailed as exc:
        _log(str(exc))
        return EXIT_UNVERIFIED
    except PassnetError as exc:
        _log(f"error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
