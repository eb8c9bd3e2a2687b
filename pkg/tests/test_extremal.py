from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixedplap.energy import OperatorParams, seminorm
from mixedplap.extremal import (
    check_euler_lagrange_extremal,
    constraint_integral,
    extremal_constant,
    normalization_tau,
    sobolev_margin,
    verify_simplicity,
    verify_sobolev,
)
from mixedplap.grid import interval_grid, zero_extend
from mixedplap.solver import SingularProblem, SolveReport, make_source, solve_singular


@pytest.fixture(scope="module")
def extremal(solved_default):
    prob, rep = solved_default
    return prob, rep, extremal_constant(rep, prob.delta, prob.f, prob.op)


def test_tau_examples():
    g = interval_grid(0, 1, 11)
    n = g.n_interior
    f = make_source(g, 1.0)
    # constant u with int u^(1/2) f = 1
    u = zero_extend(np.full(n, (1 / (n * g.cell_volume)) ** 2), g)
    assert normalization_tau(u, 0.5, f) == pytest.approx(1.0)
    u4 = zero_extend(np.full(n, (4 / (n * g.cell_volume)) ** 2), g)
    assert normalization_tau(u4, 0.5, f) == pytest.approx(1 / 16)
    assert normalization_tau(u4 * 2.0, 0.5, f) == pytest.approx(normalization_tau(u4, 0.5, f) / 2)
    with pytest.raises(ValueError):
        normalization_tau(u, 1.0, f)
    with pytest.raises(ValueError):
        normalization_tau(zero_extend(np.zeros(n), g), 0.5, f)


def test_mu_formula_exponent(extremal):
    prob, rep, res = extremal
    norm_p = seminorm(prob.grid, prob.op).value(rep.u_final.interior)  # ||u||^p
    assert res.mu_from_formula == pytest.approx((norm_p ** (1 / 2)) ** -6, rel=1e-12)
    assert res.mu_gap <= 1e-3
    assert res.identity_defect <= 1e-3
    assert res.constraint_defect <= 1e-12
    # u scaled to unit norm would give mu = 1 from the formula
    unit = rep.u_final * (1 / norm_p ** (1 / prob.op.p))
    assert extremal_constant(unit, prob.delta, prob.f, prob.op).mu_from_formula == pytest.approx(1.0)


def test_extremal_rejects_bad_input(solved_default):
    prob, rep = solved_default
    with pytest.raises(ValueError):
        extremal_constant(rep, 1.0, prob.f, prob.op)
    bad = SolveReport(rep.u_final, rep.per_n, False, message="forced")
    with pytest.raises(ValueError, match="did not converge"):
        extremal_constant(bad, prob.delta, prob.f, prob.op)
    x = rep.u_final.interior.copy()
    x[3] = 0.0
    with pytest.raises(ValueError):
        extremal_constant(zero_extend(x, prob.grid), prob.delta, prob.f, prob.op)


def test_sobolev_examples(extremal, rng):
    prob, rep, res = extremal
    zero = zero_extend(np.zeros(prob.grid.n_interior), prob.grid)
    assert sobolev_margin(zero, res.mu, prob.delta, prob.f, prob.op) == 0.0
    report = verify_sobolev(res.mu, prob.delta, prob.f, prob.op, 200, rng, res.V_delta)
    assert report.passed
    assert abs(report.equality_margin) <= 1e-3 * res.mu
    assert set(report.kinds) == {"noise", "bump", "extremal"}
    # a constant above mu is falsified by the extremal itself
    assert sobolev_margin(res.V_delta, 1.01 * res.mu, prob.delta, prob.f, prob.op) < 0


@given(st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
def test_quotient_is_scale_invariant(c, seed):
    g = interval_grid(0, 1, 21)
    op = OperatorParams.make(2.0, 0.5, 1)
    f = make_source(g, 1.0)
    v = zero_extend(np.random.default_rng(seed).standard_normal(g.n_interior), g)
    norm = seminorm(g, op)
    q = lambda w: norm.value(w.interior) / constraint_integral(w, 0.5, f) ** 4
    assert q(v * c) == pytest.approx(q(v), rel=1e-10)


def test_simplicity_examples(extremal, rng):
    prob, rep, res = extremal
    recs = verify_simplicity(res.mu, prob.delta, prob.f, prob.op, 4, res.V_delta, rng)
    assert [r.start for r in recs[:2]] == ["extremal", "negative"]
    assert recs[0].distance <= 1e-8
    assert all(r.distance < 1e-2 and r.converged for r in recs)
    with pytest.raises(ValueError):
        verify_simplicity(res.mu, prob.delta, prob.f, prob.op, 1, res.V_delta)


def test_euler_lagrange_examples(extremal):
    prob, rep, res = extremal
    r = check_euler_lagrange_extremal(res.V_delta, res.mu, prob.delta, prob.f, prob.op)
    assert r < 1e-7
    assert check_euler_lagrange_extremal(res.V_delta, 2 * res.mu, prob.delta, prob.f, prob.op) > r
    assert check_euler_lagrange_extremal(res.V_delta * 2, res.mu, prob.delta, prob.f, prob.op) > r


@pytest.mark.parametrize("delta", [0.25, 0.75])
def test_extremal_other_exponents(delta):
    g = interval_grid(0, 1, 51)
    prob = SingularProblem(delta, make_source(g, 1.0), OperatorParams.make(2.0, 0.5, 1))
    res = extremal_constant(solve_singular(prob), delta, prob.f, prob.op)
    assert res.mu_gap <= 1e-9
    assert res.identity_defect <= 1e-9
