import math

import numpy as np
import pytest

from rsma_mmf import kernel
from rsma_mmf.kernel import (
    INFEASIBLE,
    OPTIMAL,
    ConvexProgram,
    LogRateConstraint,
    affine_program,
    constraint_values,
    estimate_multipliers,
    kkt_residual,
    phase1_point,
    solve_max_t,
)


def chain_program(rho_max=3.0, penalty=0.0):
    """maximize t  s.t.  t <= log2(1 + rho) - penalty * rho,  0 <= rho <= rho_max; x = [rho, t]."""
    log = LogRateConstraint((0,), np.array([penalty, 0.0]), 0.0, 1)
    return affine_program(2, [([1.0, 0.0], -rho_max)], 1, np.array([0.0, -np.inf]), [log])


def test_monotone_chain_binds_at_box():
    res = solve_max_t(chain_program(), tol=1e-8)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.0, abs=1e-7)
    assert res.x[0] == pytest.approx(3.0, abs=1e-6)
    assert res.kkt_residual <= 1e-8


def test_penalized_chain_boundary_optimum():
    res = solve_max_t(chain_program(10.0, 0.1), tol=1e-8)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(math.log2(11) - 1, abs=1e-7)
    assert res.x[0] == pytest.approx(10.0, abs=1e-6)
    assert res.kkt_residual <= 1e-8


def test_interior_stationary_point():
    # stationary point 1/(0.1 ln 2) - 1 lies inside a wider box
    res = solve_max_t(chain_program(20.0, 0.1), tol=1e-8)
    rho = 1 / (0.1 * math.log(2)) - 1
    assert res.x[0] == pytest.approx(rho, abs=1e-4)
    assert res.objective == pytest.approx(math.log2(1 + rho) - 0.1 * rho, abs=1e-7)


def test_contradictory_box_is_infeasible():
    prog = affine_program(2, [([1.0, 0.0], -1.0), ([-1.0, 0.0], 2.0)], 1)
    x, status = phase1_point(prog)
    assert status == INFEASIBLE
    assert solve_max_t(prog).status == INFEASIBLE


def test_phase1_returns_strictly_feasible_point():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = 4
        center = rng.normal(size=n)
        A = rng.normal(size=(8, n))
        b = -(A @ center) - rng.uniform(0.1, 1.0, 8)  # center is strictly feasible
        prog = affine_program(n, list(zip(A, b)), n - 1)
        x, status = phase1_point(prog, x0=center + 5 * rng.normal(size=n))
        assert status == OPTIMAL
        assert np.all(constraint_values(prog, x) <= -kernel.STRICT_SLACK)


def test_kkt_residual_at_analytic_optimum_and_interior_point():
    prog = chain_program(10.0, 0.1)
    x = np.array([10.0, math.log2(11) - 1])
    lam = estimate_multipliers(prog, x)
    assert kkt_residual(prog, x, lam) <= 1e-8
    inner = np.array([5.0, 0.5])
    assert kkt_residual(prog, inner, estimate_multipliers(prog, inner)) > 1e-3


def test_residual_decreases_along_path():
    rng = np.random.default_rng(9)
    for _ in range(5):
        cap = rng.uniform(1, 50)
        res = solve_max_t(chain_program(cap, rng.uniform(0, 0.05)), tol=1e-8)
        path = np.array(res.path)
        assert path.size >= 2
        assert np.all(np.diff(path) <= 1e-12 + 1e-9 * np.abs(path[:-1]))


def test_perturbed_start_same_objective():
    prog = chain_program(10.0, 0.1)
    a = solve_max_t(prog, tol=1e-8)
    b = solve_max_t(prog, tol=1e-8, x0=np.array([0.5, -20.0]))
    assert a.objective == pytest.approx(b.objective, abs=1e-8)


def test_deterministic_objective():
    prog = chain_program(7.0, 0.02)
    assert solve_max_t(prog).objective == solve_max_t(prog).objective


def test_tightening_never_increases_objective():
    loose = solve_max_t(chain_program(10.0, 0.05)).objective
    tight = solve_max_t(chain_program(6.0, 0.05)).objective
    assert tight <= loose + 1e-9


def test_duality_gap_bounded_by_tol():
    res = solve_max_t(chain_program(), tol=1e-6)
    assert res.duality_gap <= 1e-6


def test_program_validation():
    log = LogRateConstraint((0,), np.zeros(2), 0.0, 0)
    with pytest.raises(ValueError):
        affine_program(2, [], 1, np.array([0.0, -np.inf]), [log])
    log = LogRateConstraint((0,), np.zeros(2), 0.0, 1)
    with pytest.raises(ValueError):
        affine_program(2, [], 1, np.array([-2.0, -np.inf]), [log])
    with pytest.raises(ValueError):
        ConvexProgram(2, np.zeros((1, 2)), np.zeros(2), [], np.zeros(2), 1)
