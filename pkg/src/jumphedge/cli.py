"""Command-line runner: ``jumphedge <subcommand> --config FILE --out DIR``.

Exit codes: 0 all verdicts pass, 1 usage or configuration error, 2 verdict
failure, 3 numerical failure (instability, positivity, exclusion budget).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .acceptance import report_bytes, run_suite
from .config import (
    SCHEMA_VERSION,
    ConfigError,
    Experiment,
    build_experiment,
    dump_schema,
    load_config,
    preset,
    PRESETS,
)
from .hedge import (
    pi_monotonicity_check,
    price_domination_check,
    run_delta_hedge,
    submartingale_test,
)
from .model import check_domination, validate_models
from .pide import (
    StabilityError,
    convexity_report,
    delta_bound_report,
    export_surface_csv,
    mc_price,
    solve_pide,
)
from .poisson import pide_residual_certificate, run_replication
from .robust import enumerate_family, robust_hedge_test, robust_price
from .sim import MeasureChange, SimulationError, set_default_threads, simulate_true

log = logging.getLogger("jumphedge")

EXIT_OK, EXIT_USAGE, EXIT_VERDICT, EXIT_NUMERIC = 0, 1, 2, 3
EXCLUSION_BUDGET = 1e-3
# absolute PIDE discretisation budget added to the Monte Carlo band in `price`
PRICE_GRID_BUDGET = 0.01


class NumericalFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _verdict(name: str, ok: bool, **detail) -> dict:
    detail.pop("passed", None)
    return {"name": name, "passed": bool(ok), **detail}


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _surface_slices(vs, n_slices: int = 3, n_points: int = 41) -> dict:
    jt = np.unique(np.linspace(0, vs.times.size - 1, n_slices).round().astype(int))
    ix = np.unique(np.linspace(0, vs.prices.size - 1, n_points).round().astype(int))
    return {"times": vs.times[jt].tolist(), "x": vs.prices[ix].tolist(),
            "values": vs.values[np.ix_(jt, ix)].tolist(),
            "deltas": vs.deltas[np.ix_(jt, ix)].tolist()}


def _surface_checks(vs, payoff) -> list[dict]:
    r = convexity_report(vs)
    out = [_verdict("convexity", r.passed, worst=r.worst, threshold=r.threshold,
                    at=list(r.location))]
    r = delta_bound_report(vs, payoff)
    out.append(_verdict("delta_bound", r.passed, worst=r.worst, threshold=r.threshold))
    return out


def _checkpoint_rows(rep) -> list[list]:
    rows = []
    for m in rep.measures:
        for t, mu, se in zip(rep.checkpoints, m["means"], m["stderrs"]):
            rows.append([m["measure"], float(t), mu, se])
    return rows


def _check_exclusion(rate: float, what: str) -> None:
    if rate >= EXCLUSION_BUDGET:
        raise NumericalFailure(f"{what}: {rate:.3%} of paths left the space grid "
                               f"(budget {EXCLUSION_BUDGET:.1%}); widen the grid")


def _header(exp: Experiment) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": exp.kind, "seed": exp.seed,
            "config": exp.doc, "package_version": __version__,
            "model_fingerprint": exp.model.fingerprint if exp.model is not None else None,
            "true_fingerprint": exp.true.fingerprint if exp.true is not None else None}


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def run_validate(exp: Experiment, out: Path) -> dict:
    rep = validate_models(exp.true, exp.model, exp.sampling, exp.log_moment_bound)
    verdicts = [_verdict(c.name, c.passed, worst=c.worst, threshold=c.threshold, detail=c.detail)
                for c in rep.checks]
    dom = None
    if np.array_equal(exp.true.levy.marks, exp.model.levy.marks):
        dom = check_domination(exp.true, exp.model, exp.sampling).as_dict()
    _write_csv(out / "checks.csv", ["name", "passed", "worst", "threshold"],
               [[c.name, c.passed, c.worst, c.threshold] for c in rep.checks])
    return {"verdicts": verdicts, "domination": dom}


def run_price(exp: Experiment, out: Path) -> dict:
    vs = solve_pide(exp.model, exp.payoff, exp.pide_grid, exp.space_grid)
    price = vs.price(exp.x0)
    mean, se = mc_price(exp.model, exp.payoff, 0.0, exp.x0, exp.n_paths, exp.seed, T=exp.T,
                        n_steps=exp.sim_grid.n_steps, scheme=exp.scheme)
    band = 3.0 * se + PRICE_GRID_BUDGET
    verdicts = [_verdict("pide_vs_mc", abs(price - mean) <= band, pide=price, mc_mean=mean,
                         mc_stderr=se, band=band)]
    verdicts += _surface_checks(vs, exp.payoff)
    result = {"price": price, "surface_meta": _json_meta(vs.meta), "slices": _surface_slices(vs)}
    if exp.payoff.is_affine:
        slope = float(exp.payoff.slopes[0])
        dev = float(np.max(np.abs(vs.deltas - slope)))
        result["delta_deviation_from_slope"] = dev
        verdicts.append(_verdict("affine_delta_equals_slope", dev <= 1e-6, deviation=dev))
    export_surface_csv(vs, out / "surface.csv")
    result["verdicts"] = verdicts
    return result


def _json_meta(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if isinstance(v, (str, int, float, bool, type(None), dict, list))}


def run_hedge(exp: Experiment, out: Path) -> dict:
    vs = solve_pide(exp.model, exp.payoff, exp.pide_grid, exp.space_grid)
    measures = [MeasureChange.reference(exp.model.levy.n_atoms)]
    measures += [m for m in exp.measures if not m.is_reference]
    sub = submartingale_test(exp.true, exp.model, vs, measures, exp.checkpoints, exp.n_paths,
                             exp.seed, exp.sim_grid, check_grid=exp.sampling)
    for m in sub.measures:
        _check_exclusion(m["exclusion_rate"], f"hedge under {m['measure']}")
    paths = simulate_true(exp.true, exp.sim_grid, exp.n_paths, exp.seed)
    hr = run_delta_hedge(paths, vs, checkpoints=exp.checkpoints)
    terminal = hr.terminal_error
    mean_e = float(np.mean(terminal))
    se_e = float(np.std(terminal, ddof=1) / np.sqrt(terminal.size))
    dom = price_domination_check(vs, exp.true, exp.n_paths, exp.seed, exp.sim_grid.n_steps)
    verdicts = []
    for m in sub.measures:
        verdicts.append(_verdict(f"{m['measure']}_nonnegative", m["nonnegative"]))
        verdicts.append(_verdict(f"{m['measure']}_nondecreasing", m["nondecreasing"]))
    verdicts.append(_verdict("price_domination", dom.passed, **dom.as_dict()))
    if exp.model.levy.n_atoms:
        pi = pi_monotonicity_check(paths, vs, exp.true, exp.model)
        verdicts.append(_verdict("pi_monotone", pi.passed, **pi.as_dict()))
    _write_csv(out / "checkpoints.csv", ["measure", "t", "mean_disc_error", "stderr"],
               _checkpoint_rows(sub))
    return {"v0": vs.price(exp.x0), "mean_terminal_error": mean_e, "terminal_error_stderr": se_e,
            "submartingale": sub.as_dict(), "surface_meta": _json_meta(vs.meta),
            "slices": _surface_slices(vs), "verdicts": verdicts}


def run_robust(exp: Experiment, out: Path, threads: int) -> dict:
    f = dict(exp.family or {"kind": "singleton"})
    fam = enumerate_family(exp.model, f.get("kind", "singleton"),
                           theta_grid=f.get("theta_grid", (0.0,)), B=f.get("B"), B1=f.get("B1"),
                           B2=f.get("B2"),
                           explicit=[(c["psi"], c["theta"]) for c in f.get("explicit", [])],
                           condition_I_bound=f.get("condition_I_bound"), grid=exp.sampling)
    rs = robust_price(exp.model, exp.payoff, fam, exp.pide_grid, exp.space_grid, threads=threads)
    rep = robust_hedge_test(exp.true, rs, fam, exp.checkpoints, exp.n_paths, exp.seed, exp.sim_grid)
    for m in rep.measures:
        _check_exclusion(m["exclusion_rate"], f"robust hedge under {m['measure']}")
    verdicts = [_verdict(f"{m['measure']}_nonnegative", m["nonnegative"]) for m in rep.measures]
    verdicts += _surface_checks(rs.surface, exp.payoff)
    labels = [c.label for c in fam.candidates]
    prices = rs.candidate_prices(exp.x0)
    _write_csv(out / "candidates.csv", ["measure", "price"], zip(labels, prices))
    _write_csv(out / "checkpoints.csv", ["measure", "t", "mean_disc_error", "stderr"],
               _checkpoint_rows(rep))
    export_surface_csv(rs.surface, out / "surface.csv")
    return {"robust_price": rs.surface.price(exp.x0), "family": fam.describe(),
            "candidates": [{"measure": lab, "price": p} for lab, p in zip(labels, prices)],
            "argmax_t0": rs.argmax[0].tolist(), "x": rs.surface.prices.tolist(),
            "argmax_summary": rs.argmax_summary(), "submartingale": rep.as_dict(),
            "slices": _surface_slices(rs.surface), "verdicts": verdicts}


def run_poisson(exp: Experiment, out: Path) -> dict:
    pm = exp.poisson
    vs = solve_pide(pm.misspecified(), exp.payoff, exp.pide_grid, exp.space_grid)
    gaps, rep = run_replication(pm, vs, exp.x0, exp.sim_grid, exp.n_paths, exp.seed)
    _check_exclusion(rep.n_excluded / rep.n_paths, "replication")
    cert = pide_residual_certificate(vs, pm)
    counts, edges = np.histogram(gaps, bins=40)
    _write_csv(out / "gaps.csv", ["path_id", "gap"], ((i, float(g)) for i, g in enumerate(gaps)))
    return {"model": pm.describe(), "grid": {"time": exp.pide_grid.describe(),
                                             "space": exp.space_grid.describe()},
            "min_gap": rep.min_gap, "mean_gap": rep.mean_gap, "violation_count": rep.violation_count,
            "tol_sh": rep.tol_sh, "replication": rep.as_dict(), "certificate": cert.as_dict(),
            "gap_histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
            "verdicts": [_verdict("superhedge", rep.passed, violation_count=rep.violation_count)]}


def run_acceptance(exp: Experiment, out: Path, only: Optional[list[int]]) -> dict:
    only = only or exp.doc.get("only")

    def progress(r):
        log.info("criterion %02d %s: %s", r["id"], r["name"], "PASS" if r["passed"] else "FAIL")

    suite = run_suite(only, exp.seed, progress)
    _write_csv(out / "criteria.csv", ["id", "name", "passed"],
               [[r["id"], r["name"], r["passed"]] for r in suite["criteria"]])
    return {"criteria": suite["criteria"],
            "verdicts": [_verdict(f"criterion_{r['id']:02d}", r["passed"]) for r in suite["criteria"]]}


def _load_experiment(args) -> Experiment:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    doc = load_config(args.config) if args.config else preset(args.preset)
    if args.command != doc.get("experiment"):
        raise ConfigError(f"/experiment: config declares {doc.get('experiment')!r} "
                          f"but subcommand is {args.command!r}")
    return build_experiment(doc, args.seed_override)


def run(args) -> int:
    try:
        exp = _load_experiment(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    set_default_threads(args.threads)
    try:
        if exp.kind == "validate":
            body = run_validate(exp, out)
        elif exp.kind == "price":
            body = run_price(exp, out)
        elif exp.kind == "hedge":
            body = run_hedge(exp, out)
        elif exp.kind == "robust":
            body = run_robust(exp, out, args.threads)
        elif exp.kind == "poisson":
            body = run_poisson(exp, out)
        else:
            body = run_acceptance(exp, out, _parse_only(args.only))
    except (StabilityError, SimulationError, NumericalFailure) as exc:
        report = {**_header(exp), "passed": False, "numerical_failure": str(exc)}
        (out / "report.json").write_bytes(report_bytes(report))
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        set_default_threads(1)
    passed = all(v["passed"] for v in body["verdicts"])
    report = {**_header(exp), **body, "passed": passed}
    (out / "report.json").write_bytes(report_bytes(report))
    if not args.no_plots:
        from .plots import emit_plots
        emit_plots(out / "report.json", out / "plots")
    for v in body["verdicts"]:
        log.info("%-40s %s", v["name"], "PASS" if v["passed"] else "FAIL")
    return EXIT_OK if passed else EXIT_VERDICT


def _parse_only(text: Optional[str]) -> Optional[list[int]]:
    if not text:
        return None
    try:
        return sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise ConfigError(f"--only expects comma-separated criterion numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumphedge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "price", "hedge", "robust", "poisson", "acceptance-suite"):
        sp = sub.add_parser(name, help=f"run a {name} experiment")
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", help="YAML or JSON experiment document")
        src.add_argument("--preset", choices=sorted(PRESETS), help="named built-in experiment")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
        sp.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
        sp.add_argument("--no-plots", action="store_true", help="skip SVG plots")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
        if name == "acceptance-suite":
            sp.add_argument("--only", default=None, help="comma-separated criterion numbers")
        else:
            sp.set_defaults(only=None)
    pl = sub.add_parser("plots", help="render SVG plots from an existing report.json")
    pl.add_argument("report", help="path to report.json")
    pl.add_argument("--out", default=None, help="plot directory (default: <report dir>/plots)")
    sc = sub.add_parser("schema", help="print the configuration JSON schema")
    sc.set_defaults(out=None)
    sub.add_parser("presets", help="list named presets")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "schema":
        print(dump_schema())
        return EXIT_OK
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(f"{name:24s} {PRESETS[name]['experiment']}")
        return EXIT_OK
    if args.command == "plots":
        from .plots import PlotError, emit_plots
        rp = Path(args.report)
        try:
            files = emit_plots(rp, Path(args.out) if args.out else rp.parent / "plots")
        except (OSError, PlotError) as exc:
            print(f"plot error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        for f in files:
            print(f)
        return EXIT_OK
    if args.threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed_override is not None and not 0 <= args.seed_override < 2 ** 64:
        print("config error: --seed-override must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
