"""Acceptance criteria, one test per criterion.

Each test records a ``PASS``/``FAIL`` line (shown in the terminal summary)
and a row of metrics. With ``MIXEDPLAP_ACCEPTANCE_OUT`` set, the rows are
written there as CSV together with CLI artifacts; criterion 14 runs the
suite twice that way and compares the files byte for byte.
"""

from __future__ import annotations

import filecmp
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from mixedplap.cli import csv_text, main, stream
from mixedplap.energy import OperatorParams, energy_gradient, make_objective
from mixedplap.extremal import (
    extremal_constant,
    verify_simplicity,
    verify_sobolev,
)
from mixedplap.grid import GridFunction, disk_grid, interval_grid, zero_extend
from mixedplap.kernels import inequality_oracle
from mixedplap.solver import SingularProblem, SolverConfig, make_source, solve_auxiliary, solve_singular
from mixedplap.verify import (
    check_comparison,
    check_equivalence_modes,
    check_gradient_convergence,
    check_linfty_uniform,
    check_monotone_sequence,
    check_symmetry,
    check_uniform_power_bound,
    symmetry_threshold,
)

SEED = int(os.environ.get("MIXEDPLAP_ACCEPTANCE_SEED", "0"))
OUT = os.environ.get("MIXEDPLAP_ACCEPTANCE_OUT")
CFG = SolverConfig()

MATRIX = [(p, d, s) for p in (1.5, 2.0, 3.0) for d in (0.5, 1.0, 2.0) for s in (0.25, 0.75)]
EXTREMAL_DELTAS = (0.25, 0.5, 0.75)
EXTREMAL_NODES = (101, 201, 401)
# the discrete identity behind the extremal defect is exact, so its measured
# value is rounding noise; below this level "shrinks under refinement" is vacuous
IDENTITY_NOISE = 1e-10

METRIC_ROWS: list[dict] = []


@pytest.fixture(autouse=True, scope="module")
def single_thread():
    with threadpool_limits(1):
        yield
    if OUT:
        path = Path(OUT) / "acceptance_metrics.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(csv_text(("criterion", "passed", "metrics"), METRIC_ROWS))


@pytest.fixture
def record(acceptance_log):
    def _record(number: int, name: str, passed: bool, **metrics):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {name} " + " ".join(
            f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in metrics.items()
        )
        acceptance_log.append(line)
        METRIC_ROWS.append({"criterion": number, "passed": bool(passed),
                            "metrics": json.dumps(metrics, sort_keys=True, default=float)})
        print(line)
        return passed

    return _record


def unit_problem(p, delta, s, nodes=101, f=1.0, alpha=1.0, beta=1.0):
    g = interval_grid(0.0, 1.0, nodes)
    return SingularProblem(delta, make_source(g, f), OperatorParams.make(p, s, 1, alpha, beta))


@pytest.fixture(scope="module")
def matrix_runs():
    return {key: (prob := unit_problem(*key), solve_singular(prob, CFG)) for key in MATRIX}


@pytest.fixture(scope="module")
def extremal_runs():
    out = {}
    for i, (delta, nodes) in enumerate((d, n) for d in EXTREMAL_DELTAS for n in EXTREMAL_NODES):
        prob = unit_problem(2.0, delta, 0.5, nodes)
        rep = solve_singular(prob, CFG)
        res = extremal_constant(rep, delta, prob.f, prob.op)
        out[(delta, nodes)] = (prob, rep, res, i)
    return out


def test_criterion_01_monotone_approximation(matrix_runs, record):
    worst_node, worst_norm, bad = 0.0, 0.0, []
    for key, (_, rep) in matrix_runs.items():
        res = check_monotone_sequence(rep, slack=1e-8)
        worst_node = max(worst_node, res.detail["nodewise"])
        worst_norm = max(worst_norm, res.detail["norm"])
        if not (rep.converged and res.passed):
            bad.append(key)
    ok = record(1, "monotone approximation", not bad, runs=len(matrix_runs), worst_nodewise=worst_node,
                worst_norm=worst_norm, failing=len(bad))
    assert ok, bad


def test_criterion_02_extremal_identity(extremal_runs, record):
    ok = True
    gaps = {}
    for delta in EXTREMAL_DELTAS:
        d = [extremal_runs[(delta, n)][2].mu_gap for n in EXTREMAL_NODES]
        gaps[delta] = d
        within = max(d) <= 1e-3
        shrinks = d[-1] <= 1.2 * d[0] or max(d) <= IDENTITY_NOISE
        ok &= within and shrinks
    worst = max(max(v) for v in gaps.values())
    ok = record(2, "extremal identity", ok, worst_gap=worst, noise_floor=IDENTITY_NOISE)
    assert ok, gaps


def test_criterion_03_norm_identity(extremal_runs, record):
    worst = max(r[2].identity_defect for r in extremal_runs.values())
    ok = record(3, "norm identity", worst <= 1e-3, worst_defect=worst)
    assert ok


def test_criterion_04_sobolev_inequality(extremal_runs, record):
    min_margin, worst_eq = math.inf, 0.0
    for prob, rep, res, i in extremal_runs.values():
        sob = verify_sobolev(res.mu, prob.delta, prob.f, prob.op, 1000, stream(SEED, i, 0), res.V_delta, 0.01)
        min_margin = min(min_margin, sob.min_margin)
        worst_eq = max(worst_eq, abs(sob.equality_margin) / res.mu)
    ok = record(4, "sobolev inequality", min_margin >= 0 and worst_eq <= 1e-3, min_margin=min_margin,
                worst_equality=worst_eq)
    assert ok


def test_criterion_05_simplicity(extremal_runs, record):
    worst, unconverged = 0.0, 0
    for prob, rep, res, i in extremal_runs.values():
        recs = verify_simplicity(res.mu, prob.delta, prob.f, prob.op, 8, res.V_delta, stream(SEED, i, 1))
        worst = max(worst, max(r.distance for r in recs))
        unconverged += sum(not r.converged for r in recs)
    ok = record(5, "simplicity", worst < 1e-2 and unconverged == 0, worst_distance=worst,
                unconverged=unconverged)
    assert ok


def test_criterion_06_uniqueness(matrix_runs, record):
    thr = 10 * CFG.tol_continuation
    worst = 0.0
    for i, (prob, rep) in enumerate(matrix_runs.values()):
        x = rep.u_final.interior
        alt = x * stream(SEED, i, 2).uniform(0.5, 2.0, size=x.size)
        other = solve_singular(prob, CFG, initial=alt)
        worst = max(worst, float(np.max(np.abs(other.u_final.values - rep.u_final.values))))
    ok = record(6, "uniqueness probe", worst <= thr, worst_gap=worst, threshold=thr)
    assert ok


def test_criterion_07_comparison(record):
    worst = -math.inf
    for p in (1.5, 2.0, 3.0):
        small = unit_problem(p, 0.5, 0.5)
        big = small.with_source(GridFunction(small.grid, 2 * small.f.values))
        worst = max(worst, check_comparison(small, big, CFG, slack=1e-6).metric)
    ok = record(7, "comparison", worst <= 1e-6, worst_excess=worst)
    assert ok


def test_criterion_08_symmetry(record):
    rep1 = solve_singular(unit_problem(2.0, 0.5, 0.5), CFG)
    a1 = check_symmetry(rep1.u_final, 0)
    g2 = disk_grid(1.0, 33)
    prob2 = SingularProblem(0.5, make_source(g2, 1.0), OperatorParams.make(2.0, 0.5, 2))
    rep2 = solve_singular(prob2, CFG)
    a2 = check_symmetry(rep2.u_final, None)
    t2 = symmetry_threshold(g2)
    ok = record(8, "symmetry", rep1.converged and rep2.converged and a1 <= 1e-5 and a2 <= t2,
                asym_1d=a1, asym_disk=a2, disk_threshold=t2)
    assert ok


def test_criterion_09_uniform_bounds(matrix_runs, record):
    worst_sup = max(check_linfty_uniform(rep).metric for _, rep in matrix_runs.values())
    ratios, saturation = [], []
    for (p, d, s), (prob, rep) in matrix_runs.items():
        if d == 2.0:
            res = check_uniform_power_bound(rep, d, prob.op, factor=2.0)
            ratios.append(res.metric)
            saturation.append(res.detail["max_over_last"])
    part1 = worst_sup <= 1.05
    part2 = max(ratios) <= 2.0
    ok = record(9, "uniform bounds", part1 and part2, sup_ratio=worst_sup, power_ratio_vs_first=max(ratios),
                power_saturation=max(saturation))
    assert ok, f"sup-norm part {'passes' if part1 else 'fails'}; power bound ratios {ratios}"


def test_criterion_10_gradient_convergence(matrix_runs, record):
    worst, bad = 0.0, 0
    for _, rep in matrix_runs.values():
        if not rep.converged:
            continue
        res = check_gradient_convergence(rep, 3, CFG.tol_continuation)
        trace = res.detail["trace"]
        worst = max(worst, trace[-1])
        bad += not (trace[-1] < 10 * CFG.tol_continuation and trace[-1] < trace[0])
    ok = record(10, "gradient convergence", bad == 0, worst_final=worst, failing=bad)
    assert ok


def test_criterion_11_torsion_anchor(record):
    errs = {}
    for nodes in (101, 201):
        g = interval_grid(0.0, 1.0, nodes)
        u = solve_auxiliary(make_source(g, 1.0), OperatorParams.make(2.0, 0.5, 1, 1.0, 0.0), CFG)
        x = g.axes[0]
        errs[nodes] = float(np.max(np.abs(u.values - x * (1 - x) / 2))) / (2 * g.h**2)
    ok = record(11, "closed-form torsion", max(errs.values()) <= 1.0, err_over_2h2_101=errs[101],
                err_over_2h2_201=errs[201])
    assert ok


def test_criterion_12_kernel_math(record):
    rng = np.random.default_rng([SEED, 12])
    n = 10_000
    fails = {"AI": 0, "BrPr": 0, "Cn": 0}
    for _ in range(n):
        p = rng.uniform(1.05, 5.0)
        dim = int(rng.integers(1, 4))
        a, b = rng.standard_normal(dim) * 10 ** rng.uniform(-3, 3), rng.standard_normal(dim) * 10 ** rng.uniform(-3, 3)
        fails["AI"] += not inequality_oracle("AI", a=a, b=b, p=p, sign_only=True)
        x, y = rng.uniform(-10, 10, size=2)
        fails["BrPr"] += not inequality_oracle("BrPr", a=x, b=y, p=p, delta=rng.uniform(0.05, 3.0))
        eps = rng.uniform(0.01, 5.0)
        cx, cy = rng.uniform(eps, 50), rng.uniform(0, 50)
        if rng.uniform() < 0.5:
            cx, cy = cy, cx
        fails["Cn"] += not inequality_oracle("Cn", x=cx, y=cy, q=rng.uniform(1.01, 5.0), eps=eps)

    g = interval_grid(0.0, 1.0, 41)
    op = OperatorParams.make(2.5, 0.4, 1)
    ctxs = {
        "J": dict(g=1.0),
        "I_n": dict(n=4, delta=0.5, f=1.0),
        "I_delta": dict(delta=0.5, f=1.0),
        "J_k": dict(k=5.0, delta=1.5, f=1.0),
        "approx": dict(n=8, delta=2.0, f=1.0),
        "singular": dict(delta=1.0, f=1.0),
    }
    worst_fd = 0.0
    t = 1e-6
    for name, ctx in ctxs.items():
        obj = make_objective(name, g, op, **ctx)
        for _ in range(50):
            v = np.abs(rng.standard_normal(g.n_interior)) + 0.1
            psi = rng.standard_normal(g.n_interior)
            grad = energy_gradient(zero_extend(v, g), name, op, **ctx).interior
            an = float(grad @ psi)
            fd = (obj.value(v + t * psi) - obj.value(v - t * psi)) / (2 * t)
            worst_fd = max(worst_fd, abs(fd - an) / max(abs(an), 1e-300))
    ok = record(12, "kernel math", sum(fails.values()) == 0 and worst_fd <= 1e-5, samples=n,
                ai_fail=fails["AI"], brpr_fail=fails["BrPr"], cn_fail=fails["Cn"], worst_fd_rel=worst_fd)
    assert ok, fails


def test_criterion_13_mode_equivalence(record):
    prob = unit_problem(2.0, 0.5, 0.5)
    res = check_equivalence_modes(0.5, prob.f, prob.op, CFG)
    modes = res.detail["modes"]
    ok = record(13, "mode equivalence", res.passed, worst_residual=res.metric,
                **{f"{k}_converged": str(v["converged"]) for k, v in modes.items()})
    assert ok


def test_criterion_14_determinism(record, tmp_path):
    if OUT:
        # inside a nested run: only contribute the CLI artifacts
        cfg = {"grid": {"nodes_per_axis": 101}, "sweep": {"delta": [0.5, 2.0], "p": [1.5, 3.0]},
               "extremal": {"samples": 200, "starts": 4}}
        path = Path(OUT) / "cfg.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(cfg))
        for task in ("sweep", "verify"):
            main([task, str(path), "--out", str(Path(OUT) / task), "--seed", str(SEED), "--deterministic"])
        pytest.skip("nested determinism run")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        env = dict(os.environ, MIXEDPLAP_ACCEPTANCE_OUT=str(out), MIXEDPLAP_ACCEPTANCE_SEED=str(SEED))
        subprocess.run(
            [sys.executable, "-m", "pytest", __file__, "-q", "-p", "no:cacheprovider"],
            env=env, capture_output=True, text=True, cwd=Path(__file__).parent.parent,
        )
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    missing = [str(f) for f in files if not (outs[1] / f).exists()]
    differing = [str(f) for f in files
                 if (outs[1] / f).exists() and not filecmp.cmp(outs[0] / f, outs[1] / f, shallow=False)]
    names = {str(f) for f in files}
    metrics = {"acceptance_metrics.csv", "sweep/summary.csv", "verify/verification.csv"} <= names
    ok = record(14, "determinism", bool(files) and metrics and not differing and not missing,
                csv_files=len(files), differing=len(differing))
    assert ok, differing or missing
