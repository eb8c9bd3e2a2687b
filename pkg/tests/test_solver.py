from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from mixedplap.energy import OperatorParams, functional_I_n, make_objective
from mixedplap.grid import GridFunction, interval_grid, zero_extend
from mixedplap.optimize import minimize
from mixedplap.solver import (
    DegenerateSourceWarning,
    SingularProblem,
    SolverConfig,
    make_source,
    solve_approximated,
    solve_auxiliary,
    solve_obstacle,
    solve_singular,
    variational_inequality_defect,
)


def local_op(p=2.0):
    return OperatorParams.make(p, 0.5, 1, 1.0, 0.0)


@pytest.mark.parametrize("nodes", [101, 201])
def test_local_torsion_closed_form(nodes):
    g = interval_grid(0, 1, nodes)
    u = solve_auxiliary(make_source(g, 1.0), local_op())
    x = g.axes[0]
    err = np.max(np.abs(u.values - x * (1 - x) / 2))
    assert err <= 2 * g.h**2


def test_fractional_torsion_against_fine_reference():
    op = OperatorParams.make(2.0, 0.5, 1, 0.0, 1.0)
    coarse = interval_grid(-1, 1, 101)
    fine = interval_grid(-1, 1, 1601)
    uc = solve_auxiliary(make_source(coarse, 1.0), op)
    uf = solve_auxiliary(make_source(fine, 1.0), op)
    ref = uf.values[::16]
    assert np.max(np.abs(uc.values - ref)) <= 0.03 * np.max(ref)
    # the continuum solution with this kernel normalization is sqrt(1 - x^2) / (2 pi)
    x = fine.axes[0]
    exact = np.sqrt(np.clip(1 - x**2, 0, None)) / (2 * np.pi)
    assert np.max(np.abs(uf.values - exact)) <= 0.01 * np.max(exact)


def test_auxiliary_zero_source():
    g = interval_grid(0, 1, 21)
    u = solve_auxiliary(zero_extend(np.zeros(g.n_interior), g), OperatorParams.make(2.5, 0.5, 1))
    assert not np.any(u.values)
    with pytest.raises(ValueError):
        solve_auxiliary(zero_extend(-np.ones(g.n_interior), g), local_op())


def test_auxiliary_is_homogeneous():
    g = interval_grid(0, 1, 41)
    op = OperatorParams.make(3.0, 0.5, 1)
    u1 = solve_auxiliary(make_source(g, 1.0), op)
    u8 = solve_auxiliary(make_source(g, 8.0), op)
    # the operator is (p-1)-homogeneous, so scaling g by c scales u by c^(1/(p-1))
    np.testing.assert_allclose(u8.values, 8 ** (1 / (op.p - 1)) * u1.values, rtol=1e-9, atol=1e-14)


def test_zero_source_warns_and_gives_zero():
    g = interval_grid(0, 1, 21)
    f = zero_extend(np.zeros(g.n_interior), g)
    with pytest.warns(DegenerateSourceWarning):
        prob = SingularProblem(0.5, f, OperatorParams.make(2.0, 0.5, 1))
    assert not np.any(solve_approximated(4, prob).values)
    with pytest.raises(ValueError):
        solve_singular(prob)


def test_problem_validation():
    g = interval_grid(0, 1, 21)
    op = OperatorParams.make(2.0, 0.5, 1)
    with pytest.raises(ValueError):
        SingularProblem(0.0, make_source(g, 1.0), op)
    with pytest.raises(ValueError):
        SingularProblem(0.5, zero_extend(-np.ones(g.n_interior), g), op)
    with pytest.raises(ValueError):
        SolverConfig(n_schedule=(1, 1, 2))
    with pytest.raises(ValueError):
        SolverConfig(method="bisection")


def test_regularized_matches_direct_minimizer():
    g = interval_grid(0, 1, 51)
    op = OperatorParams.make(2.0, 0.5, 1)
    prob = SingularProblem(0.5, make_source(g, 1.0), op)
    u = solve_approximated(4, prob)
    obj = make_objective("I_n", g, op, n=4, delta=0.5, f=1.0)
    res = minimize(obj, np.full(g.n_interior, 0.1))
    assert res.converged
    assert np.max(np.abs(u.interior - res.x)) <= 1e-8 * u.sup_norm()
    assert functional_I_n(u, 4, 0.5, 1.0, op) <= functional_I_n(zero_extend(res.x, g), 4, 0.5, 1.0, op) + 1e-12


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_picard_and_newton_agree(p):
    g = interval_grid(0, 1, 51)
    prob = SingularProblem(1.0, make_source(g, 1.0), OperatorParams.make(p, 0.5, 1))
    a = solve_approximated(8, prob, method="newton")
    b = solve_approximated(8, prob, method="picard")
    assert np.max(np.abs(a.values - b.values)) <= 1e-6 * a.sup_norm()


def test_singular_report_contents(solved_default):
    prob, rep = solved_default
    assert rep.converged, rep.message
    assert rep.residual < 1e-8
    assert rep.continuation_gap < 1e-6
    assert len(rep.per_n) >= 3
    assert [st.n for st in rep.per_n] == [2**k for k in range(len(rep.per_n))]
    assert np.all(rep.u_final.interior > 0)
    assert rep.iterations == sum(st.iterations for st in rep.per_n)
    lines = rep.trace_csv().splitlines()
    assert lines[0] == "iteration,n,energy,residual,sup_norm"
    assert len(lines) == len(rep.traces) + 1
    assert math.isinf(rep.traces[-1].n)


def test_singular_solution_independent_of_start(solved_default):
    prob, rep = solved_default
    other = solve_singular(prob, initial=0.3)
    assert np.max(np.abs(other.u_final.values - rep.u_final.values)) <= 1e-8


@pytest.mark.parametrize("delta", [0.5, 2.0])
def test_singular_scaling_with_source(delta):
    # u solves with f  =>  c^(1/(p-1+delta)) u solves with c f
    g = interval_grid(0, 1, 51)
    op = OperatorParams.make(2.5, 0.5, 1)
    u1 = solve_singular(SingularProblem(delta, make_source(g, 1.0), op)).u_final
    u3 = solve_singular(SingularProblem(delta, make_source(g, 3.0), op)).u_final
    factor = 3 ** (1 / (op.p - 1 + delta))
    np.testing.assert_allclose(u3.values, factor * u1.values, rtol=1e-6, atol=1e-12)


def test_obstacle_examples(solved_default, rng):
    prob, rep = solved_default
    g = prob.grid
    k = 1e3
    big = zero_extend(np.full(g.n_interior, 10.0), g)
    free = solve_obstacle(big, k, prob)
    assert variational_inequality_defect(free, big, k, prob, rng) >= -1e-6
    eps = 1e-3
    tiny = zero_extend(np.full(g.n_interior, eps), g)
    z = solve_obstacle(tiny, k, prob)
    assert np.all(z.interior <= eps)
    where = free.interior > eps
    np.testing.assert_allclose(z.interior[where], eps, rtol=1e-9)
    assert variational_inequality_defect(z, tiny, k, prob, rng) >= -1e-6
    with pytest.raises(ValueError):
        solve_obstacle(zero_extend(np.zeros(g.n_interior), g), k, prob)


def test_make_source_kinds(tmp_path):
    g = interval_grid(0, 1, 11)
    assert np.all(make_source(g, 2.0).interior == 2.0)
    assert not np.any(make_source(g, 2.0).values[~g.interior_mask])
    rp = make_source(g, {"kind": "radial_power", "c": 1.0, "gamma": -0.5})
    assert np.all(np.isfinite(rp.values)) and np.all(rp.interior > 0)
    with pytest.raises(ValueError):
        make_source(g, {"kind": "radial_power", "gamma": -1.0})
    f = GridFunction(g, np.where(g.interior_mask, g.axes[0], 0.0))
    path = tmp_path / "f.csv"
    f.to_csv(path)
    back = make_source(g, {"kind": "csv", "path": str(path)})
    np.testing.assert_array_equal(back.values, f.values)
    with pytest.raises(ValueError):
        make_source(g, {"kind": "gaussian"})


def test_singular_solution_is_positive_for_localized_source():
    g = interval_grid(0, 1, 51)
    x = g.axes[0]
    f = GridFunction(g, np.where(g.interior_mask & (np.abs(x - 0.5) < 0.1), 1.0, 0.0))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = solve_singular(SingularProblem(0.5, f, OperatorParams.make(2.0, 0.5, 1)))
    assert rep.converged
    assert np.all(rep.u_final.interior > 0)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_rough_warm_start_reaches_same_solution(p):
    g = interval_grid(0, 1, 101)
    prob = SingularProblem(0.5, make_source(g, 1.0), OperatorParams.make(p, 0.25, 1))
    ref = solve_singular(prob)
    x = ref.u_final.interior
    rough = x * np.random.default_rng(3).uniform(0.5, 2.0, size=x.size)
    other = solve_singular(prob, initial=rough)
    assert other.converged
    assert np.max(np.abs(other.u_final.values - ref.u_final.values)) <= 1e-10
