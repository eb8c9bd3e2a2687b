"""Descent engine shared by every solve path.

Damped Newton steps with Armijo backtracking; with bounds, the projected
Newton method of Bertsekas (reduced Newton system on the free variables,
scaled gradient on the active ones, Armijo along the projection arc).
Each accepted step strictly decreases the objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """A solve exhausted its iteration budget or stalled."""


@dataclass
class DescentResult:
    x: np.ndarray
    converged: bool
    iterations: int
    energies: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    message: str = ""


MODEL_AGREEMENT = 0.1


def _newton_direction(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cho_factor(H, check_finite=False)
        return -linalg.cho_solve(c, g, check_finite=False)
    except linalg.LinAlgError:
        shift = 1e-10 * max(float(np.max(np.abs(np.diag(H)))), 1e-300)
        for _ in range(12):
            try:
                c = linalg.cho_factor(H + shift * np.eye(len(g)), check_finite=False)
                return -linalg.cho_solve(c, g, check_finite=False)
            except linalg.LinAlgError:
                shift *= 100
        return -g


def minimize(
    obj,
    x0: np.ndarray,
    *,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    tol_step: float = 1e-13,
    tol_energy: float = 0.0,
    max_iters: int = 200,
    armijo_c: float = 1e-4,
    armijo_beta: float = 0.5,
    residual=None,
    scale_floor: float = 1e-300,
) -> DescentResult:
    """Minimize a convex objective exposing ``value``, ``grad`` and ``hess``.

    Stops when an accepted step moves no node by more than
    ``tol_step * max(|x|_inf, scale_floor)``, when two consecutive steps
    lower the objective by at most ``tol_energy * |f|``, or when backtracking cannot find
    a decrease within floating-point resolution after a small step.
    A full Newton step that realizes less than ``MODEL_AGREEMENT`` of the
    decrease predicted by the quadratic model is shortened further while the
    value keeps falling; without this, steps across the kinks of a ``p < 2``
    energy can bounce between near-mirror points.
    ``residual(x, g)`` optionally records a stationarity measure per iterate.
    """
    bounded = lower is not None or upper is not None
    lo = np.full_like(x0, -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full_like(x0, np.inf) if upper is None else np.asarray(upper, float)
    x = np.clip(np.asarray(x0, float).copy(), lo, hi)
    fx = obj.value(x)
    if not np.isfinite(fx):
        raise ValueError("initial point lies outside the objective's domain")
    energies = [fx]
    residuals = []
    last_step = np.inf
    flat = 0
    for it in range(1, max_iters + 1):
        g = obj.grad(x)
        if residual is not None:
            residuals.append(float(residual(x, g)))
        H = obj.hess(x)
        scale = max(float(np.max(np.abs(x))) if x.size else 0.0, scale_floor)
        if bounded:
            pg = x - np.clip(x - g, lo, hi)
            eps_b = min(1e-12 * scale, float(np.max(np.abs(pg))) if pg.size else 0.0)
            active = ((x <= lo + eps_b) & (g > 0)) | ((x >= hi - eps_b) & (g < 0))
            free = ~active
            d = np.zeros_like(x)
            if np.any(free):
                d[free] = _newton_direction(H[np.ix_(free, free)], g[free])
            if np.any(active):
                d[active] = -g[active] / np.maximum(np.diag(H)[active], 1e-300)
        else:
            d = _newton_direction(H, g)
            if float(g @ d) >= 0:
                d = -g
        t = 1.0
        accepted = False
        for _ in range(80):
            xt = np.clip(x + t * d, lo, hi)
            ft = obj.value(xt)
            if np.isfinite(ft) and ft <= fx + armijo_c * float(g @ (xt - x)):
                accepted = True
                break
            t *= armijo_beta
        if accepted and t == 1.0:
            model = -float(g @ (xt - x)) - 0.5 * float((xt - x) @ H @ (xt - x))
            if fx - ft < MODEL_AGREEMENT * model:
                # the quadratic model overshoots (p < 2 kinks): keep halving while it pays
                xt, ft = _greedy_backtrack(obj, x, d, lo, hi, xt, ft, armijo_beta)
        if not accepted:
            # value differences below rounding: fall back on the gradient size
            xt, ft = _rounding_level_step(obj, x, fx, g, d, lo, hi, armijo_beta)
            accepted = xt is not None
        if not accepted:
            step_size = float(np.max(np.abs(d))) if d.size else 0.0
            # no representable decrease: converged if the last move was already tiny
            ok = min(last_step, step_size) <= 1e-8 * scale
            msg = "line search stalled at rounding level" if ok else "line search failed"
            return DescentResult(x, ok, it, energies, residuals, msg)
        step = float(np.max(np.abs(xt - x))) if x.size else 0.0
        if ft > fx + _rounding(fx):
            raise AssertionError("descent step increased the objective")
        flat = flat + 1 if fx - ft <= tol_energy * abs(fx) else 0
        x, fx, last_step = xt, ft, step
        energies.append(fx)
        small = step <= tol_step * max(float(np.max(np.abs(x))) if x.size else 0.0, scale_floor)
        if small or flat >= 2:
            if residual is not None:
                residuals.append(float(residual(x, obj.grad(x))))
            msg = "step below tolerance" if small else "energy decrease below tolerance"
            return DescentResult(x, True, it, energies, residuals, msg)
    return DescentResult(x, False, max_iters, energies, residuals, "iteration budget exhausted")


def _greedy_backtrack(obj, x, d, lo, hi, xt, ft, beta):
    t = 1.0
    for _ in range(60):
        t *= beta
        xs = np.clip(x + t * d, lo, hi)
        fs = obj.value(xs)
        if not (np.isfinite(fs) and fs < ft):
            break
        xt, ft = xs, fs
    return xt, ft


def _rounding(fx: float) -> float:
    return 64 * np.finfo(float).eps * max(abs(fx), 1e-300)


def _proj_grad_norm(x, g, lo, hi) -> float:
    return float(np.max(np.abs(x - np.clip(x - g, lo, hi)))) if x.size else 0.0


def _rounding_level_step(obj, x, fx, g, d, lo, hi, beta):
    """Step along ``d`` that keeps the value within rounding and shrinks the gradient."""
    g0 = _proj_grad_norm(x, g, lo, hi)
    t = 1.0
    for _ in range(40):
        xt = np.clip(x + t * d, lo, hi)
        ft = obj.value(xt)
        if np.isfinite(ft) and ft <= fx + _rounding(fx):
            if _proj_grad_norm(xt, obj.grad(xt), lo, hi) < 0.5 * g0:
                return xt, min(ft, fx)
        t *= beta
    return None, fx


def ray_start(obj, w: np.ndarray) -> np.ndarray:
    """Best multiple ``lam * w`` (``lam > 0``) of a direction, by 1-D search on ``log lam``."""
    if not np.any(w):
        return w.copy()

    def phi(t):
        v = obj.value(np.exp(t) * w)
        return v if np.isfinite(v) else 1e300

    res = optimize.minimize_scalar(phi, bracket=(-2.0, 2.0), tol=1e-10)
    return np.exp(res.x) * w
