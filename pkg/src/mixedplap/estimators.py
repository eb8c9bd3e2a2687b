"""Estimator-style wrappers: hyperparameters in ``__init__``, work in ``fit``.

``X`` is the source term as a :class:`GridFunction`; there is no target.
"""

from __future__ import annotations

import numbers

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted, check_scalar

from .energy import OperatorParams, seminorm
from .extremal import constraint_integral, extremal_constant, verify_simplicity, verify_sobolev
from .grid import GridFunction
from .solver import SingularProblem, SolverConfig, solve_singular


def _check_source(X) -> GridFunction:
    if not isinstance(X, GridFunction):
        raise TypeError(f"X must be a GridFunction holding the source term, got {type(X).__name__}")
    return X


class _OperatorMixin:
    def _validate_operator(self):
        check_scalar(self.p, "p", numbers.Real, min_val=1, include_boundaries="neither")
        check_scalar(self.s, "s", numbers.Real, min_val=0, max_val=1, include_boundaries="neither")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            check_scalar(value, name, numbers.Real)
            if value not in (0, 1):
                raise ValueError(f"{name} toggles a part of the operator and must be 0 or 1, got {value}")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both vanish")

    def _operator(self, dim: int) -> OperatorParams:
        return OperatorParams.make(self.p, self.s, dim, self.alpha, self.beta)

    def _config(self) -> SolverConfig:
        return SolverConfig(
            tol_residual=self.tol_residual,
            tol_continuation=self.tol_continuation,
            max_iters=self.max_iters,
            method=self.method,
        )


class MixedSingularSolver(_OperatorMixin, BaseEstimator):
    """Solve ``-Lap_p u + (-Lap_p)^s u = f / u^delta`` with zero exterior data.

    Parameters
    ----------
    p, s : float
        Exponents of the operator, ``p > 1`` and ``0 < s < 1``.
    delta : float
        Strength of the singularity, ``delta > 0``.
    alpha, beta : {0, 1}
        Toggles for the local and nonlocal parts.
    tol_residual, tol_continuation : float
        Weak-residual and continuation stopping tolerances.
    max_iters : int
        Newton iterations per continuation stage.
    method : {"newton", "picard"}
        Route to each regularized solution.

    Attributes
    ----------
    solution_ : GridFunction
    report_ : SolveReport
    converged_ : bool
    residual_ : float
    """

    def __init__(self, p=2.0, s=0.5, delta=0.5, alpha=1.0, beta=1.0, tol_residual=1e-8,
                 tol_continuation=1e-6, max_iters=200, method="newton"):
        self.p = p
        self.s = s
        self.delta = delta
        self.alpha = alpha
        self.beta = beta
        self.tol_residual = tol_residual
        self.tol_continuation = tol_continuation
        self.max_iters = max_iters
        self.method = method

    def fit(self, X, y=None):
        f = _check_source(X)
        self._validate_operator()
        check_scalar(self.delta, "delta", numbers.Real, min_val=0, include_boundaries="neither")
        check_scalar(self.max_iters, "max_iters", numbers.Integral, min_val=1)
        prob = SingularProblem(float(self.delta), f, self._operator(f.grid.dim))
        self.report_ = solve_singular(prob, self._config())
        self.solution_ = self.report_.u_final
        self.converged_ = self.report_.converged
        self.residual_ = self.report_.residual
        return self

    def predict(self, X):
        """Piecewise-linear interpolant of the solution at points ``X`` (shape ``(m, N)``)."""
        check_is_fitted(self, "solution_")
        grid = self.solution_.grid
        pts = np.asarray(X, float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[-1] != grid.dim:
            raise ValueError(f"points must have {grid.dim} coordinates")
        interp = RegularGridInterpolator(grid.axes, self.solution_.values, bounds_error=False, fill_value=0.0)
        return interp(pts)


class SobolevExtremal(_OperatorMixin, BaseEstimator):
    """Best constant and extremal of the mixed inequality for a source ``f``.

    Attributes
    ----------
    mu_ : float
    tau_ : float
    extremal_ : GridFunction
    result_ : ExtremalResult
    sobolev_ : SobolevReport
    """

    def __init__(self, p=2.0, s=0.5, delta=0.5, alpha=1.0, beta=1.0, n_samples=1000, n_starts=8,
                 tol_residual=1e-8, tol_continuation=1e-6, max_iters=200, method="newton",
                 random_state=None):
        self.p = p
        self.s = s
        self.delta = delta
        self.alpha = alpha
        self.beta = beta
        self.n_samples = n_samples
        self.n_starts = n_starts
        self.tol_residual = tol_residual
        self.tol_continuation = tol_continuation
        self.max_iters = max_iters
        self.method = method
        self.random_state = random_state

    def fit(self, X, y=None):
        f = _check_source(X)
        self._validate_operator()
        check_scalar(self.delta, "delta", numbers.Real, min_val=0, max_val=1, include_boundaries="neither")
        check_scalar(self.n_samples, "n_samples", numbers.Integral, min_val=1)
        check_scalar(self.n_starts, "n_starts", numbers.Integral, min_val=2)
        op = self._operator(f.grid.dim)
        delta = float(self.delta)
        report = solve_singular(SingularProblem(delta, f, op), self._config())
        result = extremal_constant(report, delta, f, op)
        rs = check_random_state(self.random_state)
        seq = np.random.SeedSequence(int(rs.randint(2**31)))
        a, b = (np.random.default_rng(c) for c in seq.spawn(2))
        self.sobolev_ = verify_sobolev(result.mu, delta, f, op, self.n_samples, a, result.V_delta)
        result.inequality_margin = self.sobolev_.min_margin
        result.simplicity_records = verify_simplicity(result.mu, delta, f, op, self.n_starts, result.V_delta, b)
        self.result_ = result
        self.source_ = f
        self.mu_ = result.mu
        self.tau_ = result.tau_delta
        self.extremal_ = result.V_delta
        return self

    def transform(self, X):
        """Sobolev quotient ``||v||^p / (int |v|^(1-delta) f)^(p/(1-delta))`` of each field in ``X``."""
        check_is_fitted(self, "mu_")
        op = self._operator(self.source_.grid.dim)
        norm = seminorm(self.source_.grid, op)
        out = []
        for v in X:
            if v.grid is not self.source_.grid:
                raise ValueError("fields must live on the grid used in fit")
            S = constraint_integral(v, self.delta, self.source_)
            out.append(norm.value(v.interior) / S ** (op.p / (1 - self.delta)) if S > 0 else np.inf)
        return np.asarray(out)
