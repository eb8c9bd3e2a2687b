"""Best constant of the mixed Sobolev-type inequality for ``0 < delta < 1``.

For the singular solution ``u`` the extremal is ``V = tau * u`` with ``tau``
chosen so that ``int V^(1-delta) f = 1``. The constant

    mu = inf { ||v||^p : int |v|^(1-delta) f = 1 }

is computed twice: from the closed form ``||u||^(p(1-delta-p)/(1-delta))`` and
as ``||V||^p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .energy import OperatorParams, _as_nodal, seminorm, weak_residual
from .grid import Grid, GridFunction
from .solver import SolveReport

IDENTITY_TOL = 1e-3


def _require_subunit(delta: float) -> None:
    if not 0 < delta < 1:
        raise ValueError(f"the extremal problem needs 0 < delta < 1, got delta={delta}")


def constraint_integral(v, delta: float, f, grid: Grid | None = None) -> float:
    """``int |v|^(1-delta) f`` by nodal quadrature."""
    if isinstance(v, GridFunction):
        grid, x = v.grid, v.interior
    else:
        x = np.asarray(v, float)
    fx = _as_nodal(f, grid)
    return grid.cell_volume * float(np.sum(fx * np.abs(x) ** (1 - delta)))


def normalization_tau(u: GridFunction, delta: float, f) -> float:
    """Scale ``tau`` with ``int (tau u)^(1-delta) f = 1``."""
    _require_subunit(delta)
    S = constraint_integral(u, delta, f)
    if not S > 0:
        raise ValueError("constraint integral vanishes: u and f have disjoint supports")
    return S ** (-1.0 / (1 - delta))


@dataclass
class SimplicityRecord:
    start: str
    distance: float
    converged: bool
    iterations: int


@dataclass
class SobolevReport:
    constant: float
    margins: np.ndarray
    equality_margin: float
    kinds: list[str] = field(default_factory=list)

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins)) if self.margins.size else math.nan

    @property
    def passed(self) -> bool:
        return bool(self.margins.size == 0 or self.min_margin >= 0)


@dataclass
class ExtremalResult:
    mu: float
    tau_delta: float
    V_delta: GridFunction
    mu_from_formula: float
    mu_from_infimum: float
    identity_defect: float
    constraint_defect: float
    tolerance: float = IDENTITY_TOL
    inequality_margin: float = math.nan
    simplicity_records: list[SimplicityRecord] = field(default_factory=list)

    @property
    def mu_gap(self) -> float:
        return abs(self.mu_from_formula - self.mu_from_infimum) / self.mu

    def summary(self) -> dict:
        return {
            "mu": self.mu,
            "mu_from_formula": self.mu_from_formula,
            "mu_from_infimum": self.mu_from_infimum,
            "mu_relative_gap": self.mu_gap,
            "tau_delta": self.tau_delta,
            "identity_defect": self.identity_defect,
            "constraint_defect": self.constraint_defect,
            "min_margin": self.inequality_margin,
            "simplicity": [
                {"start": r.start, "distance": r.distance, "converged": r.converged, "iterations": r.iterations}
                for r in self.simplicity_records
            ],
        }


def extremal_constant(u_delta, delta: float, f, op: OperatorParams) -> ExtremalResult:
    """Extremal ``V = tau u`` and both evaluations of ``mu`` from a singular solution.

    ``u_delta`` may be a :class:`SolveReport`, in which case it must have converged.
    """
    _require_subunit(delta)
    if isinstance(u_delta, SolveReport):
        if not u_delta.converged:
            raise ValueError(f"singular solve did not converge: {u_delta.message}")
        u_delta = u_delta.u_final
    if np.any(u_delta.interior <= 0):
        raise ValueError("the singular solution must be positive at interior nodes")
    grid, p = u_delta.grid, op.p
    norm = seminorm(grid, op)
    norm_u = norm.value(u_delta.interior)
    S = constraint_integral(u_delta, delta, f)
    tau = normalization_tau(u_delta, delta, f)
    V = u_delta * tau
    mu_formula = norm_u ** ((1 - delta - p) / (1 - delta))
    mu_inf = norm.value(V.interior)
    return ExtremalResult(
        mu=mu_formula,
        tau_delta=tau,
        V_delta=V,
        mu_from_formula=mu_formula,
        mu_from_infimum=mu_inf,
        identity_defect=abs(norm_u - S) / norm_u,
        constraint_defect=abs(constraint_integral(V, delta, f) - 1.0),
    )


# ----------------------------------------------------------------------------
# the inequality


def sobolev_margin(v: GridFunction, C: float, delta: float, f, op: OperatorParams) -> float:
    """``||v||^p - C (int |v|^(1-delta) f)^(p/(1-delta))``."""
    S = constraint_integral(v, delta, f)
    return seminorm(v.grid, op).value(v.interior) - C * S ** (op.p / (1 - delta))


def _jacobi_sweep(values: np.ndarray, grid: Grid) -> np.ndarray:
    k = np.array([0.25, 0.5, 0.25]) if grid.dim == 1 else np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 8.0
    out = ndimage.convolve(values, k, mode="constant", cval=0.0)
    return np.where(grid.interior_mask, out, 0.0)


def random_samples(grid: Grid, count: int, rng: np.random.Generator):
    """Half smoothed nodal noise, half Gaussian bumps; yields ``(kind, GridFunction)``."""
    lo = np.array([b[0] for b in grid.bounds])
    hi = np.array([b[1] for b in grid.bounds])
    coords = grid.node_coords
    for k in range(count):
        if k % 2 == 0:
            raw = np.where(grid.interior_mask, rng.standard_normal(grid.node_shape), 0.0)
            yield "noise", GridFunction(grid, _jacobi_sweep(raw, grid))
        else:
            c = rng.uniform(lo, hi)
            w = rng.uniform(0.05, 0.5) * grid.diameter
            amp = rng.standard_normal()
            bump = amp * np.exp(-np.sum((coords - c) ** 2, axis=-1) / (2 * w * w))
            yield "bump", GridFunction(grid, np.where(grid.interior_mask, bump, 0.0))


def verify_sobolev(mu: float, delta: float, f: GridFunction, op: OperatorParams,
                   sample_count: int, rng: np.random.Generator | None = None,
                   V_delta: GridFunction | None = None, slack: float = 0.01) -> SobolevReport:
    """Margins of the inequality with ``C = mu (1 - slack)`` on random fields.

    ``equality_margin`` is the margin of ``V_delta`` at ``C = mu`` itself.
    """
    _require_subunit(delta)
    if not mu > 0:
        raise ValueError("mu must be positive")
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    C = mu * (1 - slack)
    margins, kinds = [], []
    for kind, v in random_samples(f.grid, sample_count, rng):
        margins.append(sobolev_margin(v, C, delta, f, op))
        kinds.append(kind)
    eq = math.nan
    if V_delta is not None:
        margins.append(sobolev_margin(V_delta, C, delta, f, op))
        kinds.append("extremal")
        eq = sobolev_margin(V_delta, mu, delta, f, op)
    return SobolevReport(C, np.asarray(margins), eq, kinds)


# ----------------------------------------------------------------------------
# simplicity


class _LogQuotient:
    """``log ||v||^p - (p/(1-delta)) log int |v|^(1-delta) f`` on sign-fixed vectors."""

    def __init__(self, grid: Grid, op: OperatorParams, delta: float, f):
        self.norm = seminorm(grid, op)
        self.w = grid.cell_volume * _as_nodal(f, grid)
        self.p, self.delta = op.p, delta
        self.k = op.p / (1 - delta)

    def value(self, x):
        S = float(np.sum(self.w * np.abs(x) ** (1 - self.delta)))
        return math.log(self.norm.value(x)) - self.k * math.log(S)

    def grad(self, x):
        a = np.abs(x)
        S = float(np.sum(self.w * a ** (1 - self.delta)))
        dS = (1 - self.delta) * self.w * np.sign(x) * a ** (-self.delta)
        return self.norm.grad(x) / self.norm.value(x) - self.k * dS / S

    def metric(self, x):
        a = np.abs(x)
        S = float(np.sum(self.w * a ** (1 - self.delta)))
        H = self.norm.hess(x) / self.norm.value(x)
        d2S = (1 - self.delta) * self.delta * self.w * a ** (-self.delta - 1)
        H[np.diag_indices_from(H)] += self.k * d2S / S
        return H


def _minimize_quotient(obj: _LogQuotient, x, renorm, max_iters=300, tol=1e-12):
    from .optimize import _newton_direction

    x = renorm(x)
    fx = obj.value(x)
    for it in range(1, max_iters + 1):
        g = obj.grad(x)
        d = _newton_direction(obj.metric(x), g)
        if float(g @ d) >= 0:
            d = -g
        # keep every component on its side of zero
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d * x < 0, -x / d, np.inf)
        t = min(1.0, 0.9 * float(np.min(ratio))) if ratio.size else 1.0
        accepted = False
        for _ in range(60):
            xt = x + t * d
            ft = obj.value(xt)
            if np.isfinite(ft) and ft <= fx + 1e-4 * t * float(g @ d):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return x, True, it
        xt = renorm(xt)
        step = float(np.max(np.abs(xt - x))) / float(np.max(np.abs(xt)))
        x, fx = xt, obj.value(xt)
        if step < tol:
            return x, True, it
    return x, False, max_iters


def verify_simplicity(mu: float, delta: float, f: GridFunction, op: OperatorParams, starts: int,
                      V_delta: GridFunction, rng: np.random.Generator | None = None) -> list[SimplicityRecord]:
    """Minimize the scale-invariant quotient from several starts; distance of each result to ``+-V``.

    Starts: ``V`` itself, a field shaped like ``-V``, then ``starts - 2``
    random positive fields. Each iterate is rescaled onto the constraint set.
    """
    _require_subunit(delta)
    if starts < 2:
        raise ValueError("verify_simplicity needs at least 2 starts")
    rng = rng if rng is not None else np.random.default_rng(0)
    grid = f.grid
    obj = _LogQuotient(grid, op, delta, f)
    V = V_delta.interior
    Vn = float(np.max(np.abs(V)))

    def renorm(x):
        S = float(np.sum(obj.w * np.abs(x) ** (1 - delta)))
        return x * S ** (-1.0 / (1 - delta))

    named = [("extremal", V.copy()), ("negative", -V * (1.0 + 0.1 * rng.uniform(size=V.size)))]
    for k in range(starts - 2):
        raw = np.where(grid.interior_mask, np.abs(rng.standard_normal(grid.node_shape)), 0.0)
        smooth = _jacobi_sweep(raw, grid)[grid.interior_mask]
        named.append((f"random-{k}", smooth + 0.05 * float(np.max(smooth))))
    records = []
    for name, x0 in named[:starts]:
        x, ok, its = _minimize_quotient(obj, x0, renorm)
        dist = min(float(np.max(np.abs(x - V))), float(np.max(np.abs(x + V)))) / Vn
        records.append(SimplicityRecord(name, dist, ok, its))
    return records


def check_euler_lagrange_extremal(V_delta: GridFunction, mu: float, delta: float, f,
                                  op: OperatorParams) -> float:
    """Weak residual of ``V`` for the singular problem with source ``mu f``."""
    if np.any(V_delta.interior <= 0):
        raise ValueError("V_delta must be positive at interior nodes")
    return weak_residual(V_delta, delta, f, op, multiplier=mu)
