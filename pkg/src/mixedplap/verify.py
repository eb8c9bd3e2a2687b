"""Property checks over solve reports, each producing one verification-table row."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .energy import OperatorParams, mixed_norm_p
from .grid import Grid, GridError, GridFunction, reflect
from .solver import SingularProblem, SolveReport, SolverConfig, solve_singular

TABLE_COLUMNS = ("check", "params", "metric", "threshold", "passed")


@dataclass
class CheckResult:
    check: str
    params: dict
    metric: float
    threshold: float
    passed: bool
    witness: object = None
    detail: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "check": self.check,
            "params": json.dumps(self.params, sort_keys=True),
            "metric": self.metric,
            "threshold": self.threshold,
            "passed": bool(self.passed),
        }


# ----------------------------------------------------------------------------
# integrability bookkeeping


@dataclass(frozen=True)
class IntegrabilityExponent:
    """Integrability exponent for ``f``.

    ``case`` is ``"subcritical"`` (p < N), ``"borderline"`` (p = N) or
    ``"supercritical"`` (p > N). ``value`` is ``None`` for the borderline
    marker "any t > 1". ``strict`` means the requirement is ``q > value``
    rather than ``f in L^value``.
    """

    case: str
    which: str
    value: float | None
    p_star: float | None
    strict: bool = False

    @property
    def any_t(self) -> bool:
        return self.value is None


def _conjugate(x: Fraction) -> Fraction:
    return x / (x - 1)


def required_integrability(p: float, N: int, delta: float, which: str = "existence") -> IntegrabilityExponent:
    """Exponent needed of ``f`` for existence (``m``), regularity (``q``) or uniqueness (``t``).

    With ``p* = Np/(N-p)`` for ``p < N``: ``m = (p*/(1-delta))' = p*/(p* - (1-delta))``,
    ``q > p*/(p* - p)`` and ``t = (p*)'``. For ``p = N`` any exponent above 1
    works; for ``p > N`` the exponent is 1.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if which not in ("existence", "regularity", "uniqueness"):
        raise ValueError(f"unknown requirement {which!r}")
    if which == "existence" and not delta < 1:
        raise ValueError("the existence exponent m is defined for 0 < delta < 1")
    if p > N:
        return IntegrabilityExponent("supercritical", which, 1.0, None)
    if p == N:
        return IntegrabilityExponent("borderline", which, None, None, strict=True)
    # exact rational arithmetic where the inputs allow it
    pf, df = Fraction(p).limit_denominator(10**6), Fraction(delta).limit_denominator(10**6)
    ps = N * pf / (N - pf)
    if which == "existence":
        val = _conjugate(ps / (1 - df))
    elif which == "regularity":
        val = ps / (ps - pf)
    else:
        val = _conjugate(ps)
    return IntegrabilityExponent("subcritical", which, float(val), float(ps), strict=which == "regularity")


# ----------------------------------------------------------------------------
# checks over a single report


def _need_stages(report: SolveReport, k: int):
    if len(report.per_n) < k:
        raise ValueError(f"check needs at least {k} continuation stages, report has {len(report.per_n)}")


def check_monotone_sequence(report: SolveReport, slack: float = 1e-8) -> CheckResult:
    """``u_{n+1} >= u_n`` nodewise and ``||u_n||`` nondecreasing, with slack."""
    _need_stages(report, 2)
    scale = report.u_final.sup_norm()
    worst_node, witness = 0.0, None
    worst_norm = 0.0
    for a, b in zip(report.per_n, report.per_n[1:]):
        drop = a.u.values - b.u.values
        k = int(np.argmax(drop))
        if drop.flat[k] > worst_node:
            worst_node = float(drop.flat[k])
            witness = {"n": b.n, "node": np.unravel_index(k, drop.shape)}
        worst_norm = max(worst_norm, (a.norm_p - b.norm_p) / max(a.norm_p, 1e-300))
    node_metric = worst_node / max(scale, 1e-300)
    ok = node_metric <= slack and worst_norm <= slack
    if witness is None and worst_norm > slack:
        witness = {"norm": worst_norm}
    return CheckResult(
        "monotone_sequence",
        {"stages": len(report.per_n)},
        max(node_metric, worst_norm),
        slack,
        ok,
        witness,
        {"nodewise": node_metric, "norm": worst_norm},
    )


def check_linfty_uniform(report: SolveReport, factor: float = 1.05) -> CheckResult:
    """``max_n ||u_n||_inf <= factor * ||u_final||_inf``."""
    _need_stages(report, 2)
    sups = [st.sup_norm for st in report.per_n]
    ratio = max(sups) / max(report.u_final.sup_norm(), 1e-300)
    return CheckResult("linfty_uniform", {"stages": len(sups)}, ratio, factor, ratio <= factor,
                       detail={"trace": sups})


def check_uniform_power_bound(report: SolveReport, delta: float, op: OperatorParams,
                              factor: float = 2.0) -> CheckResult:
    """For ``delta > 1``: ``||u_n^((delta+p-1)/p)||^p`` stays within ``factor`` of its first-stage value."""
    _need_stages(report, 2)
    e = (delta + op.p - 1) / op.p
    vals = [mixed_norm_p(GridFunction(st.u.grid, st.u.values**e), op) for st in report.per_n]
    ratio = max(vals) / max(vals[0], 1e-300)
    saturation = max(vals) / max(vals[-1], 1e-300)
    return CheckResult(
        "uniform_power_bound",
        {"delta": delta, "exponent": e},
        ratio,
        factor,
        ratio <= factor,
        detail={"trace": vals, "max_over_last": saturation},
    )


def check_compact_positivity(report: SolveReport, fraction: float = 0.9) -> CheckResult:
    """Every ``u_n`` stays above ``fraction * min u_1`` on the compact-subset witness."""
    _need_stages(report, 1)
    floor = fraction * report.per_n[0].compact_min
    mins = [st.compact_min for st in report.per_n]
    metric = min(mins) / max(floor, 1e-300)
    return CheckResult("compact_positivity", {"fraction": fraction}, metric, 1.0,
                       bool(floor > 0 and metric >= 1.0), detail={"trace": mins})


def check_symmetry(u: GridFunction, axis: int | None = 0) -> float:
    """``||u - reflect(u)||_inf / ||u||_inf``; ``axis=None`` takes the worst over all axes."""
    axes = range(u.grid.dim) if axis is None else [axis]
    scale = max(u.sup_norm(), 1e-300)
    return max(float(np.max(np.abs(u.values - reflect(u, ax).values))) for ax in axes) / scale


def symmetry_threshold(grid: Grid) -> float:
    return 5 * grid.h**2 if grid.center is not None else 1e-5


def check_symmetry_result(u: GridFunction, axis: int | None = None) -> CheckResult:
    thr = symmetry_threshold(u.grid)
    val = check_symmetry(u, axis)
    return CheckResult("symmetry", {"axis": axis, "dim": u.grid.dim}, val, thr, val <= thr)


def _forward_differences(u: GridFunction) -> list[np.ndarray]:
    h = u.grid.h
    return [np.diff(u.values, axis=ax) / h for ax in range(u.grid.dim)]


def check_gradient_convergence(report: SolveReport, compact_margin: int = 3,
                               tol_continuation: float = 1e-6) -> CheckResult:
    """Trace of ``max |D u_n - D u_final|`` on nodes at least ``compact_margin`` cells inside."""
    _need_stages(report, 3)
    grid = report.u_final.grid
    mask = grid.compact_mask(compact_margin)
    if not np.any(mask):
        raise GridError("compact margin leaves no nodes")
    masks = []
    for ax in range(grid.dim):
        sl_a = [slice(None)] * grid.dim
        sl_b = [slice(None)] * grid.dim
        sl_a[ax], sl_b[ax] = slice(None, -1), slice(1, None)
        masks.append(mask[tuple(sl_a)] & mask[tuple(sl_b)])
    Df = _forward_differences(report.u_final)
    trace = []
    for st in report.per_n:
        Dn = _forward_differences(st.u)
        trace.append(max(float(np.max(np.abs(a - b)[m], initial=0.0)) for a, b, m in zip(Dn, Df, masks)))
    thr = 10 * tol_continuation
    ok = trace[-1] < thr and (trace[-1] < trace[0] or trace[0] < thr)
    return CheckResult("gradient_convergence", {"margin": compact_margin}, trace[-1], thr, ok,
                       detail={"trace": trace})


# ----------------------------------------------------------------------------
# checks that solve


def check_comparison(prob_small: SingularProblem, prob_big: SingularProblem,
                     cfg: SolverConfig | None = None, slack: float = 1e-6) -> CheckResult:
    """Solve both problems; pass iff ``u_small <= u_big + slack * scale``."""
    if prob_small.grid is not prob_big.grid:
        raise GridError("comparison needs a common grid")
    if prob_small.delta != prob_big.delta or prob_small.op != prob_big.op:
        raise ValueError("comparison needs equal delta and operator")
    if np.any(prob_small.f.values > prob_big.f.values):
        raise ValueError("comparison needs f_small <= f_big nodewise")
    a = solve_singular(prob_small, cfg)
    b = solve_singular(prob_big, cfg)
    if not (a.converged and b.converged):
        raise RuntimeError("a comparison solve did not converge")
    scale = max(b.u_final.sup_norm(), 1e-300)
    excess = float(np.max(a.u_final.values - b.u_final.values)) / scale
    return CheckResult(
        "comparison",
        {"delta": prob_small.delta, "p": prob_small.op.p},
        excess,
        slack,
        excess <= slack,
        detail={"u_small": a.u_final, "u_big": b.u_final},
    )


def check_uniqueness(prob: SingularProblem, starts, cfg: SolverConfig | None = None) -> CheckResult:
    """Solutions from different initial guesses agree within ``10 * tol_continuation``."""
    cfg = cfg or SolverConfig()
    sols = [solve_singular(prob, cfg, initial=s).u_final for s in starts]
    gap = max(float(np.max(np.abs(a.values - sols[0].values))) for a in sols[1:])
    thr = 10 * cfg.tol_continuation
    return CheckResult("uniqueness", {"starts": len(sols)}, gap, thr, gap <= thr)


MODES = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))


def check_equivalence_modes(delta: float, f: GridFunction, op: OperatorParams,
                            cfg: SolverConfig | None = None) -> CheckResult:
    """Solve with local only, nonlocal only and mixed operators.

    Passes iff all three converge with residual below tolerance. Records each
    mode's extremal constant and, as a trend only, whether the mixed
    solution stays below the local one.
    """
    from .extremal import extremal_constant

    if not 0 < delta < 1:
        raise ValueError("mode equivalence is stated for 0 < delta < 1")
    cfg = cfg or SolverConfig()
    modes = {}
    sols = {}
    for a, b in MODES:
        mop = OperatorParams(op.kp, a, b)
        name = {(1.0, 0.0): "local", (0.0, 1.0): "nonlocal", (1.0, 1.0): "mixed"}[(a, b)]
        try:
            r = solve_singular(SingularProblem(delta, f, mop), cfg)
        except Exception as exc:  # a failed mode is the reported outcome
            modes[name] = {"converged": False, "residual": math.nan, "mu": math.nan, "error": str(exc)}
            continue
        mu = extremal_constant(r.u_final, delta, f, mop).mu if r.converged else math.nan
        modes[name] = {"converged": r.converged, "residual": r.residual, "mu": mu}
        sols[name] = r.u_final
    ok = all(m["converged"] and m["residual"] < cfg.tol_residual for m in modes.values())
    worst = max((m["residual"] for m in modes.values()), default=math.nan)
    trend = None
    if "mixed" in sols and "local" in sols:
        scale = max(sols["local"].sup_norm(), 1e-300)
        trend = float(np.max(sols["mixed"].values - sols["local"].values)) / scale
    return CheckResult("equivalence_modes", {"delta": delta, "p": op.p, "s": op.kp.s}, worst,
                       cfg.tol_residual, ok, detail={"modes": modes, "mixed_minus_local": trend})
