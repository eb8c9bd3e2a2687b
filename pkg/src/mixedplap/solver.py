"""Solve paths for the singular problem and its regularizations.

``solve_auxiliary``       -Lap_p u + (-Lap_p)^s u = g  (minimizes ``J``)
``solve_approximated``    the regularized problem with ``f_n/(u^+ + 1/n)^delta``
``solve_singular``        continuation over ``n`` followed by a final solve of
                          the discrete singular problem itself
``solve_obstacle``        minimizes ``J_k`` over ``0 <= phi <= v``
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import (
    OperatorParams,
    make_objective,
    residual_floor,
    residual_vector,
    seminorm,
    weak_residual,
)
from .grid import Grid, GridError, GridFunction, zero_extend
from .optimize import ConvergenceError, DescentResult, minimize, ray_start

logger = logging.getLogger(__name__)


class DegenerateSourceWarning(UserWarning):
    """The source term is identically zero."""


@dataclass(frozen=True)
class SingularProblem:
    """``-Lap_p u + (-Lap_p)^s u = f / u^delta`` in the domain, ``u = 0`` outside."""

    delta: float
    f: GridFunction
    op: OperatorParams

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if np.any(self.f.values < 0):
            raise ValueError("f must be nonnegative")
        if not np.max(self.f.values) > 0:
            warnings.warn("f vanishes identically: the regularized solutions are zero", DegenerateSourceWarning,
                          stacklevel=3)
        if self.op.kp.N != self.f.grid.dim:
            raise GridError("operator dimension does not match the grid")

    @property
    def grid(self) -> Grid:
        return self.f.grid

    def with_source(self, f: GridFunction) -> "SingularProblem":
        return replace(self, f=f)

    def with_op(self, op: OperatorParams) -> "SingularProblem":
        return replace(self, op=op)


@dataclass(frozen=True)
class SolverConfig:
    tol_step: float = 1e-13
    tol_energy: float = 1e-15
    tol_residual: float = 1e-8
    tol_continuation: float = 1e-6
    max_iters: int = 200
    n_schedule: tuple[int, ...] = tuple(2**k for k in range(41))
    min_stages: int = 3
    armijo_c: float = 1e-4
    armijo_beta: float = 0.5
    picard_max_iters: int = 500
    method: str = "newton"

    def __post_init__(self) -> None:
        if not self.tol_energy >= 0:
            raise ValueError("tol_energy must be nonnegative")
        for name in ("tol_step", "tol_residual", "tol_continuation"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        sched = tuple(int(n) for n in self.n_schedule)
        if not sched or sched[0] < 1 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("n_schedule must be a strictly increasing list of integers >= 1")
        object.__setattr__(self, "n_schedule", sched)
        if not 0 < self.armijo_c < 1 or not 0 < self.armijo_beta < 1:
            raise ValueError("Armijo parameters must lie in (0, 1)")
        if self.method not in ("newton", "picard"):
            raise ValueError("method must be 'newton' or 'picard'")

    def descent_kwargs(self) -> dict:
        return dict(
            tol_step=self.tol_step,
            tol_energy=self.tol_energy,
            max_iters=self.max_iters,
            armijo_c=self.armijo_c,
            armijo_beta=self.armijo_beta,
        )


@dataclass
class StageRecord:
    n: int
    u: GridFunction
    iterations: int
    residual: float
    norm_p: float
    sup_norm: float
    compact_min: float


@dataclass
class TraceRow:
    iteration: int
    n: float
    energy: float
    residual: float
    sup_norm: float


@dataclass
class SolveReport:
    u_final: GridFunction
    per_n: list[StageRecord]
    converged: bool
    traces: list[TraceRow] = field(default_factory=list)
    residual: float = math.nan
    residual_floor: float = math.nan
    continuation_gap: float = math.nan
    message: str = ""

    @property
    def n_final(self) -> int:
        return self.per_n[-1].n if self.per_n else 0

    @property
    def iterations(self) -> int:
        return sum(st.iterations for st in self.per_n)

    def trace_csv(self) -> str:
        lines = ["iteration,n,energy,residual,sup_norm"]
        for row in self.traces:
            lines.append(
                f"{row.iteration},{row.n!r},{row.energy!r},{row.residual!r},{row.sup_norm!r}"
            )
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------


def _interior(u, grid: Grid) -> np.ndarray:
    if u is None:
        return np.zeros(grid.n_interior)
    if isinstance(u, GridFunction):
        return u.interior.copy()
    arr = np.asarray(u, float)
    if arr.ndim == 0:
        return np.full(grid.n_interior, float(arr))
    return arr.ravel().copy()


def _linear_guess(grid: Grid, op: OperatorParams, rhs: np.ndarray) -> np.ndarray:
    """Solution of the ``p = 2`` problem with the same geometry, used as a shape guess."""
    op2 = OperatorParams.make(2.0, op.kp.s, op.kp.N, op.alpha_local, op.beta_nonlocal)
    L = seminorm(grid, op2).hess(np.zeros(grid.n_interior)) / 2.0
    return np.linalg.solve(L, grid.cell_volume * rhs)


def _check_descent(res: DescentResult, what: str):
    if not res.converged:
        raise ConvergenceError(f"{what}: {res.message} after {res.iterations} iterations")


def solve_auxiliary(g, op: OperatorParams, cfg: SolverConfig | None = None, grid: Grid | None = None,
                    x0=None) -> GridFunction:
    """Unique minimizer of ``J(v) = ||v||^p / p - int g v`` for ``g >= 0``."""
    cfg = cfg or SolverConfig()
    if isinstance(g, GridFunction):
        grid = g.grid
        gx = g.interior
    else:
        if grid is None:
            raise ValueError("grid is required when g is not a GridFunction")
        gx = _interior(g, grid)
    if np.any(gx < 0):
        raise ValueError("g must be nonnegative")
    if not np.any(gx):
        return zero_extend(np.zeros(grid.n_interior), grid)
    obj = make_objective("J", grid, op, g=gx)
    start = _interior(x0, grid) if x0 is not None else ray_start(obj, _linear_guess(grid, op, gx))
    res = minimize(obj, start, **cfg.descent_kwargs(), scale_floor=1e-300)
    _check_descent(res, "auxiliary solve")
    x = res.x
    tol = 1e3 * cfg.tol_step * float(np.max(np.abs(x)))
    if np.any(x < -tol):
        raise ConvergenceError("auxiliary minimizer is materially negative")
    return zero_extend(np.maximum(x, 0.0), grid)


def _approx_residual(grid, op, rhs_fn):
    def res(x, g):
        rhs = rhs_fn(x)
        return float(np.max(np.abs(residual_vector(x, grid, op, rhs))))

    return res


def _solve_approx_newton(n, prob: SingularProblem, cfg: SolverConfig, x0):
    grid, op = prob.grid, prob.op
    fx = np.minimum(prob.f.interior, n)
    obj = make_objective("approx", grid, op, n=n, delta=prob.delta, f=prob.f)
    if x0 is None:
        x0 = ray_start(obj, _linear_guess(grid, op, fx))
    res = minimize(
        obj,
        x0,
        **cfg.descent_kwargs(),
        residual=_approx_residual(grid, op, lambda x: fx * (np.maximum(x, 0) + 1.0 / n) ** (-prob.delta)),
    )
    _check_descent(res, f"regularized solve n={n}")
    return res


def _solve_approx_picard(n, prob: SingularProblem, cfg: SolverConfig, x0):
    grid, op = prob.grid, prob.op
    fn = np.minimum(prob.f.interior, n)
    h = np.zeros(grid.n_interior) if x0 is None else x0.copy()
    theta = 1.0
    prev_gap = np.inf
    bad = 0
    target = 0.1 * cfg.tol_continuation
    energies = []
    v = None
    for it in range(1, cfg.picard_max_iters + 1):
        g = fn * (np.maximum(h, 0.0) + 1.0 / n) ** (-prob.delta)
        v = solve_auxiliary(g, op, cfg, grid=grid, x0=v).interior
        gap = float(np.max(np.abs(v - h)))
        scale = max(float(np.max(np.abs(v))), 1e-300)
        if gap <= target * scale:
            h = v
            return DescentResult(h, True, it, energies, [], "picard fixed point")
        if gap >= prev_gap:
            bad += 1
            if bad >= 2:
                theta = max(0.5 * theta, 1.0 / 1024)
                bad = 0
        prev_gap = gap
        h = (1 - theta) * h + theta * v
    raise ConvergenceError(f"Picard iteration for n={n} did not converge (damping {theta})")


def solve_approximated(n: int, prob: SingularProblem, cfg: SolverConfig | None = None,
                       warm_start=None, method: str | None = None) -> GridFunction:
    """Solution ``u_n`` of the regularized problem.

    ``method="newton"`` minimizes the regularized energy directly;
    ``method="picard"`` iterates ``h -> solve_auxiliary(f_n / (h^+ + 1/n)^delta)``
    with averaging damping once the fixed-point gap stops shrinking.
    """
    u, _ = _solve_approximated(n, prob, cfg or SolverConfig(), warm_start, method)
    return u


def _solve_approximated(n, prob, cfg, warm_start, method=None):
    if n < 1:
        raise ValueError("n must be >= 1")
    method = method or cfg.method
    grid = prob.grid
    if not np.any(prob.f.interior > 0):
        return zero_extend(np.zeros(grid.n_interior), grid), DescentResult(np.zeros(grid.n_interior), True, 0)
    x0 = None if warm_start is None else _interior(warm_start, grid)
    if method == "picard":
        res = _solve_approx_picard(n, prob, cfg, x0)
    else:
        res = _solve_approx_newton(n, prob, cfg, x0)
    x = res.x
    tol = 1e3 * cfg.tol_step * float(np.max(np.abs(x)))
    if np.any(x < -tol):
        raise ConvergenceError(f"regularized solution n={n} is materially negative")
    return zero_extend(np.maximum(x, 0.0), grid), res


def _stage_record(n, u: GridFunction, res: DescentResult, prob: SingularProblem, margin: int) -> StageRecord:
    grid = prob.grid
    mask = grid.compact_mask(margin)
    cmin = float(np.min(u.values[mask])) if np.any(mask) else math.nan
    resid = res.residuals[-1] if res.residuals else math.nan
    return StageRecord(
        n=n,
        u=u,
        iterations=res.iterations,
        residual=resid,
        norm_p=seminorm(grid, prob.op).value(u.interior),
        sup_norm=u.sup_norm(),
        compact_min=cmin,
    )


def solve_singular(prob: SingularProblem, cfg: SolverConfig | None = None, initial=None,
                   compact_margin: int = 3) -> SolveReport:
    """Continuation ``n = 1, 2, 4, ...`` with warm starts, then the singular limit.

    Stages stop once the relative sup-norm gap between consecutive ``u_n``
    drops below ``tol_continuation`` (after at least ``min_stages`` stages).
    The last ``u_n`` then seeds a Newton solve of the discrete singular
    problem, whose solution is ``u_final``.
    """
    cfg = cfg or SolverConfig()
    grid = prob.grid
    if not np.any(prob.f.interior > 0):
        raise ValueError("the singular problem needs f > 0 somewhere: with f = 0 there is no positive solution")
    per_n: list[StageRecord] = []
    traces: list[TraceRow] = []
    it_global = 0
    warm = None if initial is None else _interior(initial, grid)
    prev = None
    gap = math.inf
    message = ""

    def log_trace(n, res: DescentResult, norm_x):
        nonlocal it_global
        for k, e in enumerate(res.energies):
            r = res.residuals[k] if k < len(res.residuals) else math.nan
            traces.append(TraceRow(it_global, float(n), float(e), r, norm_x))
            it_global += 1

    for n in cfg.n_schedule:
        try:
            u_n, res = _solve_approximated(n, prob, cfg, warm)
        except ConvergenceError as exc:
            message = str(exc)
            break
        log_trace(n, res, u_n.sup_norm())
        per_n.append(_stage_record(n, u_n, res, prob, compact_margin))
        warm = u_n.interior
        if prev is not None:
            gap = float(np.max(np.abs(u_n.interior - prev))) / max(u_n.sup_norm(), 1e-300)
            if gap < cfg.tol_continuation and len(per_n) >= cfg.min_stages:
                break
        prev = u_n.interior
    else:
        message = "continuation schedule exhausted"

    if not per_n:
        raise ConvergenceError(f"no regularized stage converged: {message}")

    u_last = per_n[-1].u
    continuation_ok = gap < cfg.tol_continuation
    u_final, resid, polished = u_last, math.nan, False
    if np.all(u_last.interior > 0):
        obj = make_objective("singular", grid, prob.op, delta=prob.delta, f=prob.f)
        fx = prob.f.interior
        res = minimize(
            obj,
            u_last.interior,
            **cfg.descent_kwargs(),
            residual=_approx_residual(grid, prob.op, lambda x: fx * np.where(x > 0, x, 1.0) ** (-prob.delta)),
        )
        log_trace(math.inf, res, float(np.max(np.abs(res.x))))
        if res.converged and np.all(res.x > 0):
            u_final, polished = zero_extend(res.x, grid), True
        else:
            message = message or f"singular solve: {res.message}"
    floor = math.nan
    if np.all(u_final.interior > 0):
        resid = weak_residual(u_final, prob.delta, prob.f, prob.op)
        floor = residual_floor(u_final, prob.delta, prob.f, prob.op)
    converged = bool(continuation_ok and polished and resid < max(cfg.tol_residual, 10 * floor))
    if not converged and not message:
        message = f"residual {resid:.3g} above tolerance" if polished else "continuation did not converge"
    return SolveReport(u_final, per_n, converged, traces, resid, floor, gap, message)


# ----------------------------------------------------------------------------
# obstacle problem


def solve_obstacle(v_upper: GridFunction, k: float, prob: SingularProblem,
                   cfg: SolverConfig | None = None) -> GridFunction:
    """Minimizer of ``J_k`` over ``{0 <= phi <= v_upper}`` by projected Newton."""
    cfg = cfg or SolverConfig()
    grid = prob.grid
    if v_upper.grid is not grid:
        raise GridError("obstacle lives on a different grid")
    ub = v_upper.interior
    if np.any(ub <= 0):
        raise ValueError("the upper obstacle must be positive at interior nodes")
    if not k > 0:
        raise ValueError("k must be positive")
    obj = make_objective("J_k", grid, prob.op, k=k, delta=prob.delta, f=prob.f)
    start = np.clip(ray_start(obj, _linear_guess(grid, prob.op, prob.f.interior)), 0.0, ub)
    res = minimize(obj, start, lower=np.zeros_like(ub), upper=ub, **cfg.descent_kwargs())
    _check_descent(res, "obstacle solve")
    return zero_extend(res.x, grid)


def variational_inequality_defect(z: GridFunction, v_upper: GridFunction, k: float,
                                  prob: SingularProblem, rng: np.random.Generator,
                                  samples: int = 100) -> float:
    """Smallest ``<J_k'(z), psi - z>`` over random admissible ``psi``.

    Each value is divided by ``h^N max f |psi - z|_1`` so that it is dimensionless.
    """
    grid = prob.grid
    obj = make_objective("J_k", grid, prob.op, k=k, delta=prob.delta, f=prob.f)
    g = obj.grad(z.interior) / (grid.cell_volume * float(np.max(prob.f.interior)))
    ub = v_upper.interior
    worst = math.inf
    for _ in range(samples):
        psi = rng.uniform(0.0, 1.0, size=ub.size) * ub
        d = psi - z.interior
        worst = min(worst, float(g @ d) / max(float(np.sum(np.abs(d))), 1e-300))
    return worst


# ----------------------------------------------------------------------------
# source terms


def make_source(grid: Grid, descriptor) -> GridFunction:
    """Nodal source from a descriptor.

    ``{"kind": "constant", "value": c}``,
    ``{"kind": "radial_power", "c": c, "gamma": g, "center": [...]}`` for
    ``c |x - center|^g`` with ``g > -N`` (the node at the center, if any,
    receives the average over a ball of one cell volume), or
    ``{"kind": "csv", "path": ...}`` with rows as written by ``GridFunction.to_csv``.
    A bare number is a constant.
    """
    if isinstance(descriptor, GridFunction):
        return descriptor
    if isinstance(descriptor, (int, float)):
        descriptor = {"kind": "constant", "value": float(descriptor)}
    kind = descriptor.get("kind", "constant")
    mask = grid.interior_mask
    if kind == "constant":
        val = float(descriptor.get("value", 1.0))
        values = np.where(mask, val, 0.0)
    elif kind == "radial_power":
        c = float(descriptor.get("c", 1.0))
        gamma = float(descriptor["gamma"])
        N = grid.dim
        if not gamma > -N:
            raise ValueError(f"radial power needs gamma > -N for integrability, got {gamma}")
        center = descriptor.get("center")
        if center is None:
            center = grid.center if grid.center is not None else [0.5 * (lo + hi) for lo, hi in grid.bounds]
        r = np.linalg.norm(grid.node_coords - np.asarray(center, float), axis=-1)
        rho = (grid.cell_volume / (math.pi if N == 2 else 2.0)) ** (1.0 / N)
        with np.errstate(divide="ignore"):
            vals = np.where(r > 0, c * np.where(r > 0, r, 1.0) ** gamma, c * N * rho**gamma / (N + gamma))
        values = np.where(mask, vals, 0.0)
    elif kind == "csv":
        return GridFunction.from_csv(grid, descriptor["path"])
    else:
        raise ValueError(f"unknown source kind {kind!r}")
    return GridFunction(grid, values)
