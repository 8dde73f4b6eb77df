"""Command-line front end: ``topobench {run,validate,report,export}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import config as cfgmod
from .bench import InvalidScale, assess, build_case
from .beso import run_beso
from .export import SummaryRow, export_field, export_history, format_table, write_summary
from .levelset import run_levelset
from .problem import METHODS, MethodConfig, ProblemSpec, RunRecord
from .simp import run_simp
from .vartop import run_vartop

log = logging.getLogger("topobench")

RUNNERS = {
    "simp1": lambda pb, c: run_simp("I", pb, c),
    "simp2": lambda pb, c: run_simp("II", pb, c),
    "simp3": lambda pb, c: run_simp("III", pb, c),
    "beso": run_beso,
    "vartop": run_vartop,
    "levelset": run_levelset,
}


def run_method(method: str, problem: ProblemSpec, cfg: MethodConfig) -> RunRecord:
    """Run one method and attach its black-and-white quality report."""
    rec = RUNNERS[method](problem, cfg)
    if rec.design is not None and rec.J:
        rec.quality = assess(rec, problem, cfg)
    return rec


def _job(run_cfg: cfgmod.RunConfig, method: str) -> tuple[str, SummaryRow | None, str]:
    """Run and export one method; returns (method, summary row, error text)."""
    out = Path(run_cfg.out_dir)
    try:
        case = build_case(run_cfg.case, run_cfg.scale, run_cfg.ndim)
        t0 = time.perf_counter()
        rec = run_method(method, case.problem, run_cfg.method_config(method))
        log.info("%s: %d iterations in %.1f s (%s)", method, rec.iterations,
                 time.perf_counter() - t0, rec.message or "converged")
        if run_cfg.export_history and rec.J:
            export_history(rec, out / f"{method}_history.csv")
        if run_cfg.export_fields and rec.design is not None:
            extra = {}
            if rec.stiff_fraction is not None:
                extra["stiff_fraction"] = rec.stiff_fraction
            if rec.nodal is not None:
                extra["psi"] = rec.nodal
            export_field(rec.design, case.grid, out / f"{method}_design.vtk", "design", extra)
        failed = rec.message.startswith("aborted")
        return method, SummaryRow.from_record(rec), rec.message if failed else ""
    except Exception as exc:  # noqa: BLE001 - each method fails independently
        log.exception("%s failed", method)
        return method, None, f"{type(exc).__name__}: {exc}"


def execute(run_cfg: cfgmod.RunConfig, parallel: int = 1) -> int:
    """Run every selected method; exit status is nonzero only if all fail."""
    out = Path(run_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(run_cfg, out / "config.yaml")
    if parallel > 1 and len(run_cfg.methods) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_job, [run_cfg] * len(run_cfg.methods), run_cfg.methods))
    else:
        results = [_job(run_cfg, m) for m in run_cfg.methods]
    rows, errors = [], {}
    for method, row, err in results:
        if row is not None:
            rows.append(row)
        if err:
            errors[method] = err
    title = f"{run_cfg.case}, scale {run_cfg.scale:g}, {run_cfg.ndim}D"
    write_summary(rows, out / "summary.csv", out / "summary.txt", title)
    if errors:
        (out / "errors.json").write_text(json.dumps(errors, indent=2) + "\n", encoding="utf-8")
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    for m, e in errors.items():
        print(f"{m}: FAILED: {e}", file=sys.stderr)
    return 1 if len(errors) == len(run_cfg.methods) else 0


def _resolve(args) -> cfgmod.RunConfig:
    if args.config:
        run_cfg = cfgmod.load(args.config)
    else:
        run_cfg = cfgmod.RunConfig(case=args.case, methods=list(METHODS))
    if args.methods is not None:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = sorted(set(methods) - set(METHODS))
        if bad or not methods:
            raise cfgmod.ConfigError([f"methods: unknown {bad}" if bad else "methods: empty list"])
        run_cfg.methods = methods
    if args.scale is not None:
        run_cfg.scale = args.scale
    if args.ndim is not None:
        run_cfg.ndim = args.ndim
    if args.out:
        run_cfg.out_dir = args.out
    cfgmod.validate(run_cfg.to_dict())
    return run_cfg


def cmd_run(args) -> int:
    run_cfg = _resolve(args)
    if run_cfg.is_large() and not args.allow_large:
        print(f"{run_cfg.element_count()} elements exceeds {cfgmod.LARGE_ELEMENTS}; "
              "pass --allow-large to run it", file=sys.stderr)
        return 2
    return execute(run_cfg, args.parallel)


def cmd_validate(args) -> int:
    run_cfg = _resolve(args)
    build_case(run_cfg.case, run_cfg.scale, run_cfg.ndim)
    for m in run_cfg.methods:
        run_cfg.method_config(m)
    print(f"ok: {run_cfg.case} scale {run_cfg.scale:g} ({run_cfg.element_count()} elements), "
          f"methods {', '.join(run_cfg.methods)}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out or "out")
    path = out / "summary.csv"
    if not path.exists():
        print(f"no summary at {path}", file=sys.stderr)
        return 1
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    print(format_table(rows[0], rows[1:]), end="")
    return 0


def cmd_export(args) -> int:
    """Write the config schema and a fully resolved config template."""
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    run_cfg = _resolve(args)
    run_cfg.overrides = {m: _explicit(run_cfg.method_config(m)) for m in run_cfg.methods}
    cfgmod.dump(run_cfg, out / "config.yaml")
    (out / "config.schema.json").write_text(json.dumps(cfgmod.schema_dict(), indent=2) + "\n",
                                            encoding="utf-8")
    print(f"wrote {out / 'config.yaml'} and {out / 'config.schema.json'}")
    return 0


def _explicit(cfg: MethodConfig) -> dict:
    d = cfg.to_dict()
    d.pop("method")
    return d


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topobench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, fn, helptext in (("run", cmd_run, "run methods on a benchmark case"),
                               ("validate", cmd_validate, "check a configuration"),
                               ("report", cmd_report, "print the summary of a finished run"),
                               ("export", cmd_export, "write the config schema and a template")):
        p = sub.add_parser(verb, help=helptext)
        p.set_defaults(func=fn)
        p.add_argument("--out", help="output directory")
        if verb == "report":
            continue
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--case", default="cantilever", help="case name when no config is given")
        p.add_argument("--scale", type=float, help="mesh scale factor in (0, 1]")
        p.add_argument("--ndim", type=int, choices=(2, 3))
        p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
        if verb == "run":
            p.add_argument("--allow-large", action="store_true",
                           help=f"permit runs above {cfgmod.LARGE_ELEMENTS} elements")
            p.add_argument("--parallel", type=int, default=1, metavar="N",
                           help="run up to N methods concurrently")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, InvalidScale) as exc:
        print(exc, file=sys.stderr)
        return 2
