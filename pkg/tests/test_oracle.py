import math

import numpy as np
import pytest

from rsma_mmf.baselines import noma_instance, rsma_solve
from rsma_mmf.experiments import generate_rayleigh
from rsma_mmf.model import ChannelState, FblParams
from rsma_mmf.oracle import (
    batch_min_rate,
    grid_oracle_k2,
    order_oracle,
    tangent_bound_check,
)
from rsma_mmf.sca import MmfInstance, sca_solve

SYMMETRIC_NOMA = noma_instance(ChannelState([1.0, 1.0]), FblParams(), 100.0)


def test_batch_min_rate_matches_model():
    inst = MmfInstance.heuristic(ChannelState([1.3, 0.6, 0.2]), 1, FblParams(300), 50.0)
    rng = np.random.default_rng(0)
    P = rng.uniform(0, 50, size=(20, inst.num_streams))
    expected = [inst.true_rates(p)[2] for p in P]
    assert batch_min_rate(inst, P) == pytest.approx(expected, abs=1e-12)


def test_grid_symmetric_noma():
    rep = grid_oracle_k2(SYMMETRIC_NOMA, 1e-3)
    exact = math.log2(1 + (-1 + math.sqrt(401)) / 2)
    assert rep.best_value <= exact + 1e-12
    assert exact - rep.best_value <= 5e-3
    assert rep.grid_size == 1001


def test_refining_resolution_never_decreases():
    inst = MmfInstance.heuristic(ChannelState([1.7, 0.5]), 1, FblParams(500), 100.0)
    coarse = grid_oracle_k2(inst, 1 / 50)
    fine = grid_oracle_k2(inst, 1 / 100)
    assert fine.best_value >= coarse.best_value
    # adjacent resolutions differ by at most the recorded Lipschitz step
    assert fine.best_value - coarse.best_value <= coarse.step_bound


def test_pinned_grid_agrees_with_exhaustive_grid():
    inst = MmfInstance.heuristic(ChannelState([1.2, 0.4]), 1, FblParams(250), 100.0)
    pinned = grid_oracle_k2(inst, 1 / 40)
    full = grid_oracle_k2(inst, 1 / 40, exhaustive=True)
    assert full.grid_size == 41 ** 3
    assert pinned.best_value == pytest.approx(full.best_value, abs=1e-12)


def test_grid_oracle_requires_two_users():
    inst = MmfInstance.heuristic(ChannelState([1.0, 2.0, 3.0]), 0, FblParams(), 10.0)
    with pytest.raises(ValueError):
        grid_oracle_k2(inst)
    with pytest.raises(ValueError):
        grid_oracle_k2(MmfInstance.heuristic(ChannelState([1.0, 2.0]), 2, FblParams(), 10.0))


def test_grid_oracle_deterministic():
    inst = MmfInstance.heuristic(ChannelState([0.9, 0.2]), 1, FblParams(1500), 30.0)
    a, b = grid_oracle_k2(inst, 1 / 200), grid_oracle_k2(inst, 1 / 200)
    assert a.best_value == b.best_value and np.array_equal(a.argument, b.argument)


@pytest.mark.slow
def test_solver_matches_grid_on_random_instances():
    for i, ch in enumerate(generate_rayleigh(2, 20, 12)):
        fbl = FblParams(250) if i % 2 else FblParams()
        inst = MmfInstance.heuristic(ch, 1, fbl, 100.0)
        sol = rsma_solve(ch, 1, fbl, 100.0)
        rep = grid_oracle_k2(inst, 1e-3, solver_value=sol.t_star)
        assert sol.t_star >= rep.best_value * (1 - 0.02)
        assert rep.delta == pytest.approx(rep.best_value - sol.t_star)


def test_noma_solver_matches_grid():
    sol = sca_solve(SYMMETRIC_NOMA)
    rep = grid_oracle_k2(SYMMETRIC_NOMA, 1e-3)
    assert sol.t_star >= rep.best_value * 0.99


def test_order_oracle_counts():
    single = MmfInstance.heuristic(ChannelState([1.0]), 0, FblParams(), 10.0)
    rep = order_oracle(single)
    assert rep.grid_size == 1
    assert rep.shortfall == 0.0
    two = MmfInstance.heuristic(ChannelState([1.0, 0.3]), 1, FblParams(1500), 100.0)
    assert order_oracle(two).grid_size == 6


def test_order_oracle_stream_limit():
    inst = MmfInstance.heuristic(ChannelState(np.ones(4)), 4, FblParams(), 10.0)
    with pytest.raises(ValueError):
        order_oracle(inst)


@pytest.mark.slow
def test_heuristic_order_near_best():
    worst = 0.0
    for ch in generate_rayleigh(2, 10, 21):
        inst = MmfInstance.heuristic(ch, 1, FblParams(1500), 100.0)
        rep = order_oracle(inst)
        assert rep.best_value >= rep.heuristic_value
        worst = max(worst, rep.shortfall)
    assert worst <= 0.05


def test_tangent_check_passes():
    rep = tangent_bound_check(10_000)
    assert rep.passed
    assert rep.violations == 0
    assert rep.tangency_error <= 1e-12
    assert rep.concave


def test_tangent_check_negative_control():
    rep = tangent_bound_check(100, flipped=True)
    assert not rep.passed
    assert rep.first_failure is not None
    rho, rho_n = rep.first_failure
    assert rho != rho_n


def test_tangent_check_needs_samples():
    with pytest.raises(ValueError):
        tangent_bound_check(0)
