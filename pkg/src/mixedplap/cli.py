"""Command line entry point: ``mixedplap {solve,extremal,verify,sweep} CONFIG``.

Every task writes ``summary.csv`` (one row per run), ``summary.json`` and the
normalized ``config.json`` into the output directory, plus per-run artifacts
under ``runs/<run id>/``. Exit status 0 means every solve converged and every
check passed; 1 means something failed; 2 means the configuration was rejected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import ConfigError, ExperimentConfig, parse_config
from .energy import mixed_norm_p
from .extremal import (
    check_euler_lagrange_extremal,
    extremal_constant,
    verify_simplicity,
    verify_sobolev,
)
from .grid import GridFunction
from .solver import SingularProblem, SolveReport, make_source, solve_singular
from .verify import (
    TABLE_COLUMNS,
    CheckResult,
    check_compact_positivity,
    check_comparison,
    check_gradient_convergence,
    check_linfty_uniform,
    check_monotone_sequence,
    check_symmetry,
    check_symmetry_result,
    check_uniqueness,
)

logger = logging.getLogger("mixedplap")

SUMMARY_COLUMNS = (
    "run_id",
    "delta",
    "p",
    "s",
    "alpha",
    "beta",
    "nodes",
    "n_final",
    "iterations",
    "mixed_norm_p",
    "sup_norm",
    "residual",
    "mu_formula",
    "mu_infimum",
    "min_margin",
    "checks_passed",
)

# per-run random streams, split from the config seed by counter
STREAM_SOBOLEV, STREAM_SIMPLICITY, STREAM_UNIQUENESS = 0, 1, 2


def stream(seed: int, run_index: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, run_index * 16 + purpose]))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(doc) -> str:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, tuple):
            return list(o)
        return str(o)

    return json.dumps(doc, indent=2, sort_keys=True, default=default, allow_nan=True) + "\n"


# ----------------------------------------------------------------------------


@dataclass
class RunResult:
    run_id: str
    row: dict
    files: dict[str, str] = field(default_factory=dict)
    checks: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    ok: bool = True


def _stages_csv(report: SolveReport) -> str:
    rows = [
        {
            "n": st.n,
            "iterations": st.iterations,
            "residual": st.residual,
            "mixed_norm_p": st.norm_p,
            "sup_norm": st.sup_norm,
            "compact_min": st.compact_min,
        }
        for st in report.per_n
    ]
    return csv_text(("n", "iterations", "residual", "mixed_norm_p", "sup_norm", "compact_min"), rows)


def _corrupt(report: SolveReport) -> SolveReport:
    """Swap the first two stages so that monotonicity visibly fails."""
    per_n = list(report.per_n)
    if len(per_n) >= 2:
        per_n[0], per_n[1] = per_n[1], per_n[0]
    return SolveReport(report.u_final, per_n, report.converged, report.traces, report.residual,
                       report.residual_floor, report.continuation_gap, report.message)


def _extremal_checks(report, prob, cfg: ExperimentConfig, run_index: int, solver_cfg):
    """Extremal result plus its checks; returns (result, check list, files)."""
    delta, f, op = prob.delta, prob.f, prob.op
    ex = cfg.extremal
    res = extremal_constant(report, delta, f, op)
    sob = verify_sobolev(res.mu, delta, f, op, ex["samples"], stream(cfg.seed, run_index, STREAM_SOBOLEV),
                         res.V_delta, slack=ex["slack"])
    res.inequality_margin = sob.min_margin
    res.simplicity_records = verify_simplicity(res.mu, delta, f, op, ex["starts"], res.V_delta,
                                               stream(cfg.seed, run_index, STREAM_SIMPLICITY))
    el = check_euler_lagrange_extremal(res.V_delta, res.mu, delta, f, op)
    simp = max(r.distance for r in res.simplicity_records)
    params = {"delta": delta}
    checks = [
        CheckResult("extremal_identity", params, res.mu_gap, res.tolerance, res.mu_gap <= res.tolerance),
        CheckResult("norm_identity", params, res.identity_defect, 1e-3, res.identity_defect <= 1e-3),
        CheckResult("sobolev_inequality", dict(params, samples=ex["samples"]), sob.min_margin, 0.0, sob.passed),
        CheckResult("sobolev_equality", params, abs(sob.equality_margin) / res.mu, 1e-3,
                    abs(sob.equality_margin) <= 1e-3 * res.mu),
        CheckResult("simplicity", dict(params, starts=ex["starts"]), simp, 1e-2, simp < 1e-2),
        CheckResult("euler_lagrange_extremal", params, el, 10 * solver_cfg.tol_residual,
                    el < 10 * solver_cfg.tol_residual),
    ]
    doc = res.summary()
    doc["equality_margin"] = sob.equality_margin
    doc["euler_lagrange_residual"] = el
    files = {"V_delta.csv": res.V_delta.to_csv(), "extremal.json": _json(doc)}
    return res, checks, files


def _verify_checks(report, prob, cfg: ExperimentConfig, run_index: int, solver_cfg):
    checks = []
    rep = _corrupt(report) if cfg.verify["corrupt_report"] else report
    if len(rep.per_n) >= 2:
        checks.append(check_monotone_sequence(rep))
        checks.append(check_linfty_uniform(rep))
    checks.append(check_compact_positivity(rep))
    if len(rep.per_n) >= 3 and report.converged:
        checks.append(check_gradient_convergence(rep, cfg.verify["compact_margin"], solver_cfg.tol_continuation))
    grid = prob.grid
    symmetric = all(grid.is_symmetric(ax) for ax in range(grid.dim))
    if symmetric and check_symmetry(prob.f, None) == 0.0:
        checks.append(check_symmetry_result(report.u_final))
    rng = stream(cfg.seed, run_index, STREAM_UNIQUENESS)
    alt = report.u_final.interior * rng.uniform(0.5, 2.0, size=grid.n_interior)
    checks.append(check_uniqueness(prob, [None, alt], solver_cfg))
    big = SingularProblem(prob.delta, GridFunction(grid, 2 * prob.f.values), prob.op)
    comp = check_comparison(prob, big, solver_cfg)
    comp.detail = {}
    checks.append(comp)
    if prob.delta > 1 and len(rep.per_n) >= 2:
        # bounded in n: the trace saturates
        e = (prob.delta + prob.op.p - 1) / prob.op.p
        vals = [mixed_norm_p(GridFunction(grid, st.u.values**e), prob.op) for st in rep.per_n]
        ratio = max(vals) / vals[-1]
        checks.append(CheckResult("power_bound_saturation", {"exponent": e}, ratio, 1.05, ratio <= 1.05))
    return checks


def run_point(cfg: ExperimentConfig, point: dict, run_index: int) -> RunResult:
    """One solve (plus extremal and checks as the task requires); pure apart from logging."""
    grid = cfg.build_grid(point.get("nodes"))
    op = cfg.build_operator(grid.dim, point.get("p"), point.get("s"))
    delta = point.get("delta", cfg.problem["delta"])
    f = make_source(grid, cfg.problem["f"])
    prob = SingularProblem(delta, f, op)
    solver_cfg = cfg.build_solver_config()
    run_id = f"run{run_index:03d}"
    row = {
        "run_id": run_id,
        "delta": delta,
        "p": op.p,
        "s": op.kp.s,
        "alpha": op.alpha_local,
        "beta": op.beta_nonlocal,
        "nodes": grid.nodes_per_axis,
        "mu_formula": math.nan,
        "mu_infimum": math.nan,
        "min_margin": math.nan,
    }
    result = RunResult(run_id, row)
    try:
        report = solve_singular(prob, solver_cfg)
    except Exception as exc:  # recorded, exit status reflects it
        logger.error("%s: solve failed: %s", run_id, exc)
        row.update(n_final=0, iterations=0, mixed_norm_p=math.nan, sup_norm=math.nan, residual=math.nan,
                   checks_passed="0/1")
        result.ok = False
        result.summary = {"run_id": run_id, "error": str(exc)}
        return result
    row.update(
        n_final=report.n_final,
        iterations=report.iterations,
        mixed_norm_p=mixed_norm_p(report.u_final, op),
        sup_norm=report.u_final.sup_norm(),
        residual=report.residual,
    )
    result.files["u_final.csv"] = report.u_final.to_csv()
    result.files["trace.csv"] = report.trace_csv()
    result.files["stages.csv"] = _stages_csv(report)
    checks = [CheckResult("converged", {"residual_floor": report.residual_floor}, report.residual,
                          solver_cfg.tol_residual, report.converged)]
    task = cfg.task
    if task == "sweep":
        task = "extremal" if delta < 1 else "solve"
    if task == "extremal" and report.converged:
        res, ex_checks, files = _extremal_checks(report, prob, cfg, run_index, solver_cfg)
        checks += ex_checks
        result.files.update(files)
        row.update(mu_formula=res.mu_from_formula, mu_infimum=res.mu_from_infimum, min_margin=res.inequality_margin)
    if task == "verify":
        checks += _verify_checks(report, prob, cfg, run_index, solver_cfg)
    rows = [c.row() for c in checks]
    result.checks = rows
    passed = sum(r["passed"] for r in rows)
    row["checks_passed"] = f"{passed}/{len(rows)}"
    result.ok = passed == len(rows)
    result.files["checks.csv"] = csv_text(TABLE_COLUMNS, rows)
    result.summary = {
        "run_id": run_id,
        "converged": report.converged,
        "message": report.message,
        "residual": report.residual,
        "residual_floor": report.residual_floor,
        "continuation_gap": report.continuation_gap,
        "point": point,
        "row": row,
    }
    return result


def _run_point_star(args):
    cfg, point, idx = args
    if cfg.deterministic:
        with threadpool_limits(1):
            return run_point(cfg, point, idx)
    return run_point(cfg, point, idx)


def run_experiment(cfg: ExperimentConfig) -> tuple[int, list[RunResult]]:
    """Run the configured task and write all artifacts; returns (exit status, results)."""
    points = cfg.sweep_points() if cfg.task == "sweep" else [{}]
    jobs = [(cfg, pt, i) for i, pt in enumerate(points)]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_run_point_star, jobs))
    else:
        results = [_run_point_star(j) for j in jobs]
    ok = emit_report(results, Path(cfg.output), cfg.task)
    atomic_write(Path(cfg.output) / "config.json", cfg.to_json())
    return (0 if ok else 1), results


def emit_report(results: list[RunResult], out: Path, task: str, fmt: str = "all") -> bool:
    """Write per-run artifacts, ``summary.csv`` and ``summary.json``; returns overall success.

    ``fmt`` selects ``"csv"``, ``"summary"`` (the JSON document) or ``"all"``.
    An empty result list gives header-only CSV files.
    """
    if fmt not in ("csv", "summary", "all"):
        raise ValueError(f"unknown report format {fmt!r}")
    ok = all(r.ok for r in results)
    if fmt in ("csv", "all"):
        for res in results:
            for name, text in sorted(res.files.items()):
                atomic_write(out / "runs" / res.run_id / name, text)
        atomic_write(out / "summary.csv", csv_text(SUMMARY_COLUMNS, [r.row for r in results]))
        if task == "verify":
            table = [dict(c, run_id=r.run_id) for r in results for c in r.checks]
            atomic_write(out / "verification.csv", csv_text(("run_id",) + TABLE_COLUMNS, table))
    if fmt in ("summary", "all"):
        atomic_write(out / "summary.json", _json({"task": task, "ok": ok, "runs": [r.summary for r in results]}))
    return ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedplap", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="task", required=True)
    for task in ("solve", "extremal", "verify", "sweep"):
        sp = sub.add_parser(task, help=f"run the {task} task")
        sp.add_argument("config", type=Path, help="JSON configuration document")
        sp.add_argument("--out", type=str, default=None, help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        sp.add_argument("--deterministic", action="store_true", help="single-threaded BLAS, byte-identical output")
        sp.add_argument("--threads", type=int, default=None, help="parallel sweep workers")
        sp.add_argument("--log-level", default="WARNING")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = json.loads(args.config.read_text())
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: {args.config} is not valid JSON: {exc}", file=sys.stderr)
        return 2
    if not isinstance(doc, dict):
        print("error: configuration must be a JSON object", file=sys.stderr)
        return 2
    doc["task"] = args.task
    for key in ("seed", "threads"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    if args.out is not None:
        doc["output"] = args.out
    if args.deterministic:
        doc["deterministic"] = True
    try:
        cfg = parse_config(doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    status, results = run_experiment(cfg)
    for r in results:
        print(f"{r.run_id}: {'ok' if r.ok else 'FAILED'} ({r.row.get('checks_passed', '')})")
    return status


if __name__ == "__main__":
    sys.exit(main())
