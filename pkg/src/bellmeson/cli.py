"""Command-line entry point: ``bellmeson <subcommand> [options]``.

Subcommands: predict, generate, analyze, scan-systematics, ensemble,
lhv-test, report. Failures exit with status 2 and print a single line
``<ErrorClass>: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analysis import (
    DEFAULT_VARIATIONS, ChshAnalysis, bin_events, compare_to_qm, scan_systematics,
    subtract_backgrounds,
)
from .config import RunConfig, RunMetadata, load_config
from .detector import DetectorResponse
from .ensemble import run_ensemble, run_lhv_test
from .formats import (
    ENSEMBLE_DOCUMENT_SCHEMA, EVENTS_METADATA_SCHEMA, LHV_DOCUMENT_SCHEMA, RESULT_DOCUMENT_SCHEMA,
    SYSTEMATICS_DOCUMENT_SCHEMA, atomic_write_text, budget_to_dict, emit_figures, read_events,
    result_document, result_to_dict, write_events, write_json, write_table,
)
from .generator import generate_dataset
from .physics import find_violation_boundary, violation_boundary_dt
from .streams import DOMAIN_MISC, derive_seed

log = logging.getLogger("bellmeson")

SUBCOMMANDS = ("predict", "generate", "analyze", "scan-systematics", "ensemble", "lhv-test", "report")


class UsageError(ValueError):
    pass


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def _metadata(cfg: RunConfig) -> dict:
    return RunMetadata.for_config(cfg, _timestamp()).as_dict()


def _workers(cfg: RunConfig, args) -> int:
    return args.workers or cfg["generator.workers"]


def _simulate(cfg: RunConfig, workers: int, seed: int | None = None, n_events: int | None = None):
    gen = cfg.generator
    if seed is not None:
        gen = replace(gen, seed=seed)
    if n_events is not None:
        gen = replace(gen, n_events=n_events)
    events = generate_dataset(gen, workers)
    observed = DetectorResponse.from_params(cfg.detector, random_state=gen.seed).fit_transform(events)
    return events, observed


def _require_events(args) -> Path:
    if not args.events:
        raise UsageError(f"{args.command} needs --events PATH")
    return Path(args.events)


def _analyze(cfg: RunConfig, events):
    analysis = cfg.analysis.fit(events)
    budget = None
    if cfg["analysis.systematics"]:
        budget = scan_systematics(cfg.analysis, events, cfg["analysis.systematics"])
        analysis.set_params(sigma_syst=budget.total)
        analysis.fit(events)
    return analysis, budget


def cmd_predict(cfg, args, out: Path) -> None:
    paths = emit_figures(out, params=cfg.physics, fmt_=args.format)
    theta = find_violation_boundary()
    print(f"photon violation range: 0 < theta < {theta:.7f} rad ({math.degrees(theta):.3f} deg)")
    print(f"meson violation range:  0 < dt < {violation_boundary_dt(cfg.physics):.4f} ps "
          f"(delta_m = {cfg.physics.delta_m} /ps)")
    for p in paths:
        print(f"wrote {p}")


def cmd_generate(cfg, args, out: Path) -> None:
    events, observed = _simulate(cfg, _workers(cfg, args))
    path = Path(args.events) if args.events else out / "events.csv"
    write_events(path, observed)
    doc = {
        "metadata": _metadata(cfg),
        "n_generated": len(events),
        "n_written": len(observed),
        "category_counts": {str(k): int(v) for k, v in observed["category"].value_counts(sort=False).items()},
        "sample_counts": {str(k): int(v) for k, v in observed["sample"].value_counts(sort=False).items()},
    }
    meta = write_json(path.with_name(path.stem + ".meta.json"), doc, EVENTS_METADATA_SCHEMA)
    print(f"wrote {path} ({len(observed)} events)")
    print(f"wrote {meta}")


def cmd_analyze(cfg, args, out: Path) -> None:
    events = read_events(_require_events(args))
    analysis, budget = _analyze(cfg, events)
    doc = result_document(analysis, _metadata(cfg), budget)
    path = write_json(out / "result.json", doc, RESULT_DOCUMENT_SCHEMA)
    if args.format == "csv":
        write_table(out / "bins", analysis.correlation_table(), "csv")
    emit_figures(out, analysis=analysis, fmt_=args.format)
    r = analysis.result_
    print(f"S = {r.s_value:.4f} +- {r.sigma_stat:.4f} (stat) +- {r.sigma_syst:.4f} (syst), "
          f"significance {r.significance:.2f}")
    print(f"wrote {path}")


def cmd_scan(cfg, args, out: Path) -> None:
    events = read_events(_require_events(args))
    names = cfg["analysis.systematics"] or tuple(DEFAULT_VARIATIONS)
    analysis = cfg.analysis.fit(events)
    budget = scan_systematics(cfg.analysis, events, names)
    doc = {"metadata": _metadata(cfg), "baseline": result_to_dict(analysis.result_),
           "systematics": budget_to_dict(budget)}
    path = write_json(out / "systematics.json", doc, SYSTEMATICS_DOCUMENT_SCHEMA)
    for s in budget.sources:
        print(f"{s.name:<20s} {s.shift:.4f}")
    print(f"{'total':<20s} {budget.total:.4f}")
    print(f"wrote {path}")


def cmd_ensemble(cfg, args, out: Path) -> None:
    analysis = cfg.analysis.set_params(sigma_syst=cfg["ensemble.sigma_syst"])
    summary = run_ensemble(cfg.generator, cfg.detector, analysis, cfg["ensemble.n_experiments"],
                           significance_threshold=cfg["ensemble.significance_threshold"],
                           n_workers=_workers(cfg, args))
    doc = {
        "metadata": _metadata(cfg),
        "summary": summary.as_dict(),
        "sigma_syst": cfg["ensemble.sigma_syst"],
        "experiments": [{"s_value": r.s_value, "sigma_stat": r.sigma_stat, "significance": r.significance}
                        for r in summary.results],
    }
    path = write_json(out / "ensemble.json", doc, ENSEMBLE_DOCUMENT_SCHEMA)
    for k, v in summary.as_dict().items():
        print(f"{k:<24s} {v}")
    print(f"wrote {path}")


def cmd_lhv(cfg, args, out: Path) -> None:
    results = run_lhv_test(cfg.physics, cfg["lhv.n_events"], cfg["lhv.dt_values_ps"],
                           cfg["lhv.halfwidth_ps"], cfg["lhv.n_random"], cfg.seed,
                           n_workers=_workers(cfg, args), include_qm=True)
    rows = [r.as_dict() for r in results]
    ok = all(r["max_excess_sigma"] <= 5.0 for r in rows if r["local"])
    doc = {"metadata": _metadata(cfg), "strategies": rows, "bound_respected": ok}
    path = write_json(out / "lhv.json", doc, LHV_DOCUMENT_SCHEMA)
    print(f"{'strategy':<20s} {'max S':>8s} {'sigma':>8s} {'(S-2)/sigma':>12s}")
    for r in rows:
        print(f"{r['name']:<20s} {r['max_s']:8.4f} {r['sigma_at_max']:8.4f} {r['max_excess_sigma']:12.2f}")
    print(f"local bound S <= 2 + 5 sigma respected: {'yes' if ok else 'NO'}")
    print(f"wrote {path}")


def render_report(analysis: ChshAnalysis, budget, panels) -> str:
    r = analysis.result_
    lines = [
        f"CHSH measurement at dt = {r.dt_center:g} +- {r.dt_halfwidth:g} ps "
        f"(far window {r.far_center:g} +- {r.far_halfwidth:g} ps)",
        f"  selected events     {analysis.n_selected_}",
        f"  E_R(dt)             {analysis.near_.e_r:.4f} +- {analysis.near_.sigma_stat:.4f}",
        f"  E_R(3dt)            {analysis.far_.e_r:.4f} +- {analysis.far_.sigma_stat:.4f}",
        f"  S                   {r.s_value:.4f} +- {r.sigma_stat:.4f} (stat) +- {r.sigma_syst:.4f} (syst)",
        f"  significance        {r.significance:.2f} sigma",
        "",
        "Systematic uncertainties",
    ]
    if budget is None or not budget.sources:
        lines.append("  (none configured)")
    else:
        lines += [f"  {s.name:<18s}  {s.shift:.4f}" for s in budget.sources]
        lines.append(f"  {'total':<18s}  {budget.total:.4f}")
    lines += ["", "Data vs QM prediction", f"  {'panel':<8s} {'chi2':>9s} {'dof':>4s} {'p-value':>9s}"]
    for name, p in panels.items():
        flag = "  <-- disagreement" if p.flagged else ""
        lines.append(f"  {name:<8s} {p.chi2:9.2f} {p.dof:4d} {p.p_value:9.3g}{flag}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg, args, out: Path) -> None:
    events = read_events(_require_events(args))
    analysis, budget = _analyze(cfg, events)
    n_mc = max(int(round(cfg["report.mc_factor"] * cfg.generator.n_events)), 1)
    _, mc = _simulate(cfg, _workers(cfg, args), seed=derive_seed(cfg.seed, DOMAIN_MISC, 1), n_events=n_mc)
    det = cfg.detector
    edges = analysis.signal_counts_.bin_edges
    sel = (analysis.dt_min, analysis.dt_max)
    mc_counts = bin_events(mc, edges, sel)
    if analysis.subtract_background:
        mc_counts = subtract_backgrounds(mc_counts, det)
    panels = compare_to_qm(analysis.signal_counts_, mc_counts, analysis.dilution_)
    emit_figures(out, analysis=analysis, comparison=panels, fmt_=args.format)
    text = render_report(analysis, budget, panels)
    atomic_write_text(out / "report.txt", text)
    sys.stdout.write(text)


COMMANDS = {
    "predict": cmd_predict,
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "scan-systematics": cmd_scan,
    "ensemble": cmd_ensemble,
    "lhv-test": cmd_lhv,
    "report": cmd_report,
}


HELP = {
    "predict": "tabulate the analytic CHSH curves",
    "generate": "simulate an observed event sample",
    "analyze": "measure E_R and S from an event file",
    "scan-systematics": "rerun the analysis under each systematic variation",
    "ensemble": "run pseudo-experiments and summarize S",
    "lhv-test": "check local strategies against S <= 2",
    "report": "full measurement report with data/QM comparison",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellmeson", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration file")
    common.add_argument("--seed", type=int, metavar="U64", help="override generator.seed")
    common.add_argument("--out", metavar="DIR", help="output directory (default: output.dir)")
    common.add_argument("--events", metavar="PATH", help="event file to read (or write, for generate)")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of tabular outputs")
    common.add_argument("--workers", type=int, default=0, help="parallel workers (default: config)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides({"generator.seed": args.seed})
        if args.workers < 0:
            raise UsageError("--workers must be >= 0")
        out = Path(args.out or cfg["output.dir"])
        COMMANDS[args.command](cfg, args, out)
    except Exception as exc:  # noqa: BLE001 - single-line error contract
        msg = str(exc).splitlines()[0] if str(exc) else ""
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        if args.verbose:
            log.exception("failed")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
