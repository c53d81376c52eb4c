"""Command line entry point: simulate, sweep, identities, nd, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (IDENTITY_DEFAULTS, ConfigError, load_config, output_dir, read_raw, resolve_config,
                     sim_params)
from .diagnostics import DiagnosticsRecorder, read_csv, summarize_rows
from .dynamics import StepError, Stepper
from .geometry import GeometryError, SlipSpec, geometry_from_config
from .harness import (BoundCoefficients, SweepSpec, analyze_sweep, build_grid, nd_config, nd_report,
                      provenance, read_rows_file, restore_state, run_config, run_sweep, sweep_jobs,
                      write_run_outputs, write_sweep_outputs)
from .identities import format_table, run_identity_suite

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _echo(msg: str, quiet: bool = False) -> None:
    if not quiet:
        print(msg, flush=True)


class _StepTracker:
    def __init__(self):
        self.step = 0

    def __call__(self, state):
        self.step = state.step


def _figures(result, out: Path, enabled: bool) -> None:
    if not enabled:
        return
    from .plotting import run_figures
    run_figures(result.grid, result.recorder.rows, result.final, out,
                result.stepper.params.diffusive, result.summary.get("window"))


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(cfg, args.output)
    tracker = _StepTracker()
    try:
        result = run_config(cfg, on_step=tracker)
    except StepError as exc:
        print(f"error: run stopped after step {tracker.step}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = write_run_outputs(result, out)
    _figures(result, out, cfg["output"]["figures"] and not args.no_figures)
    nu = summary.get("nusselt", {}).get("nu_flux")
    _echo(f"steps={result.final.step} t={result.final.t:.6g} samples={summary['samples']}"
          + (f" Nu(flux)={nu:.6g}" if nu is not None else "") + f" -> {out}", args.quiet)
    return EXIT_OK


def _coefficients(rows, jobs, cfg) -> list[BoundCoefficients]:
    geom = geometry_from_config(cfg["geometry"], int(cfg["grid"]["n1"]))
    period = float(cfg["geometry"]["period"])
    coefs = []
    for k, r in enumerate(rows):
        if jobs is not None:
            slip = SlipSpec.from_config(jobs[k][0]["params"]["slip"], period)
        elif r.get("alpha"):
            slip = SlipSpec.constant(float(r["alpha"]), period)
        else:
            slip = SlipSpec.from_config(cfg["sweep"]["slip"][0], period)
        coefs.append(BoundCoefficients.from_geometry(geom, slip))
    return coefs


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if cfg["sweep"] is None:
        raise ConfigError("sweep: section is required for the sweep command")
    sw = cfg["sweep"]
    out = output_dir(cfg, args.output)
    if sw["rows_file"]:
        rows = read_rows_file(sw["rows_file"])
        jobs = None
    else:
        spec = SweepSpec.from_config(sw)
        jobs = sweep_jobs(spec, cfg)
        log = None if args.quiet else (lambda r: print(
            f"Ra={r['Ra']:.4g} Pr={r['Pr']:.4g} grid={r['n1']}x{r['n2'] + 1} status={r['status']}"
            + (f" Nu={r['Nu']:.6g}" if r.get("Nu") is not None else f" ({r['reason']})"), flush=True))
        rows = run_sweep(spec, cfg, out, log, int(sw["workers"]),
                         figures=cfg["output"]["figures"] and not args.no_figures)
    analysis = analyze_sweep(rows, _coefficients(rows, jobs, cfg), float(sw["exponent"]),
                             float(sw["bound_tol"]), sw["fit_range"])
    summary = {**provenance(cfg), **analysis}
    write_sweep_outputs(rows, summary, out)
    if cfg["output"]["figures"] and not args.no_figures:
        from .plotting import sweep_loglog
        sweep_loglog(rows, analysis.get("fit"), out / "sweep_loglog.png")
    fit = analysis.get("fit")
    if fit:
        _echo(f"beta={fit['beta']:.4f} +- {fit['stderr']:.4f} (n={fit['n']})", args.quiet)
    else:
        _echo(f"fit skipped: {analysis.get('fit_skipped')}", args.quiet)
    if "bound_check" in analysis:
        b = analysis["bound_check"]
        _echo("bound margins: " + " ".join(f"{m:.3f}" for m in b["margins"])
              + f" ({'ok' if b['ok'] else 'exceeded'})", args.quiet)
    if rows and all(r.get("status") == "failed" for r in rows):
        print("error: every sweep run failed", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_identities(args) -> int:
    path = Path(args.config) if args.config else None
    cfg = load_config(path) if path else resolve_config({"params": {"Ra": 1.0}, "identities": {}})
    ident = cfg["identities"] or dict(IDENTITY_DEFAULTS)
    if args.corrupt_metric:
        ident = {**ident, "corrupt_metric": True}
    out = output_dir(cfg, args.output)
    checks = run_identity_suite(ident)
    table = format_table(checks)
    _echo(table, args.quiet)
    out.mkdir(parents=True, exist_ok=True)
    (out / "identities.txt").write_text(table + "\n")
    passed = all(c.passed for c in checks)
    (out / "identities.json").write_text(json.dumps(
        {**provenance(cfg), "passed": passed, "checks": [c.as_dict() for c in checks]}, indent=2))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_nd(args) -> int:
    cfg = nd_config(read_raw(args.config) if args.config else {})
    out = output_dir(cfg, args.output)
    tracker = _StepTracker()
    try:
        result = run_config(cfg, on_step=tracker)
    except StepError as exc:
        print(f"error: run stopped after step {tracker.step}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_run_outputs(result, out)
    report = nd_report(result)
    (out / "nd_report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    _figures(result, out, cfg["output"]["figures"] and not args.no_figures)
    c = report["conservation"]
    _echo(f"conservation ({c['status']}): drift L2={c['drift_l2']:.3e} L4={c['drift_l4']:.3e}", args.quiet)
    for key in ("velocity_decay", "hydrostatic"):
        if key in report:
            _echo(f"{key}: ratio={report[key]['ratio']:.4g} pass={report[key]['pass']}", args.quiet)
    if "decay" in report:
        d = report["decay"]
        _echo("decay detector: " + (f"T_found={d['T']:.4g}" if d["found"] else f"inconclusive ({d['reason']})"),
              args.quiet)
    _echo("note: periodic channel stands in for a bounded domain", args.quiet)
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = resolve_config(json.loads((run_dir / "config.effective.json").read_text()))
    columns, rows = read_csv(run_dir / "records.csv")
    diag = cfg["diagnostics"]
    params = sim_params(cfg)
    summary = summarize_rows(rows, columns, float(diag["window_fraction"]), float(diag["max_principle_eps"]),
                             params.diffusive)
    report = {**provenance(cfg), **summary}
    grid = build_grid(cfg)
    stepper = Stepper(grid, params)
    state = None
    if (run_dir / "checkpoint").is_dir():
        state = restore_state(stepper, run_dir / "checkpoint")
        rec = DiagnosticsRecorder(grid, params, tuple(diag["deltas"]), float(diag["delta_bg"]),
                                  tuple(diag["reference"]))
        row = rec.compute(state, state)
        report["checkpoint"] = {"t": state.t, "step": state.step, "diagnostics": row}
        last = rows[-1] if rows else None
        if last is not None and int(last["step"]) == state.step:
            skip = {"energy_residual", "u_t"}
            same = all(row[c] == last[c] or (np.isnan(row[c]) and np.isnan(last[c]))
                       for c in columns if c not in skip)
            report["checkpoint"]["matches_last_record"] = bool(same)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True, default=float))
    if not args.no_figures and rows:
        from .plotting import run_figures
        if state is not None:
            run_figures(grid, rows, state, run_dir, params.diffusive, summary.get("window"))
    nu = summary.get("nusselt", {}).get("nu_flux")
    _echo(f"samples={summary['samples']}" + (f" Nu(flux)={nu:.6g}" if nu is not None else ""), args.quiet)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="navslip", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("config", help="JSON configuration file")
        else:
            sp.add_argument("config", nargs="?", help="JSON configuration file (defaults if omitted)")
        sp.add_argument("--output", "-o", help="output directory (overrides output.directory)")
        sp.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        sp.add_argument("--quiet", "-q", action="store_true")

    common(sub.add_parser("simulate", help="run one simulation"))
    common(sub.add_parser("sweep", help="parameter sweep with exponent fit and bound check"))
    s = sub.add_parser("identities", help="identity and refinement suite")
    common(s, config_required=False)
    s.add_argument("--corrupt-metric", action="store_true", help="fault injection: negate a22")
    common(sub.add_parser("nd", help="non-diffusive conservation and relaxation scenario"),
           config_required=False)
    r = sub.add_parser("report", help="re-derive summaries and figures from a run directory")
    r.add_argument("run_dir")
    r.add_argument("--no-figures", action="store_true")
    r.add_argument("--quiet", "-q", action="store_true")
    return p


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "identities": cmd_identities,
            "nd": cmd_nd, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
