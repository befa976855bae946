"""Brute-force verifiers for the SCA solver, the decoding-order heuristic and
the tangent bound on ``sqrt(V)``.

None of these share code with the optimizer beyond the system model: rates
are evaluated directly from powers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import SPLIT1, WHOLE, DecodingOrder, dispersion, fbl_rate
from .sca import MmfInstance, SolverConfig, sca_solve

MAX_ORDER_STREAMS = 7
_CHUNK = 1 << 18


@dataclass
class OracleReport:
    """Outcome of an exhaustive search.

    ``delta`` is ``oracle - solver`` (signed) when a solver value was supplied.
    ``step_bound`` is the largest change of the objective between adjacent
    grid points, an empirical Lipschitz step for the grid resolution.
    """

    best_value: float
    argument: object
    grid_size: int
    delta: float = math.nan
    step_bound: float = math.nan
    heuristic_value: float = math.nan

    @property
    def shortfall(self) -> float:
        """Relative gap of the heuristic order to the best enumerated order."""
        if math.isnan(self.heuristic_value) or self.best_value <= 0:
            return 0.0 if self.best_value == self.heuristic_value else math.nan
        return (self.best_value - self.heuristic_value) / self.best_value


def batch_min_rate(instance: MmfInstance, powers: np.ndarray) -> np.ndarray:
    """Clamped max-min objective for each row of an ``(M, S)`` power matrix."""
    powers = np.atleast_2d(np.asarray(powers, dtype=float))
    users = instance.order.users
    rx = powers * instance.channel.gains[users]
    if instance.mode == "sic":
        interference = np.cumsum(rx[:, ::-1], axis=1)[:, ::-1] - rx
    else:
        interference = rx.sum(axis=1, keepdims=True) - rx
    sinr = rx / (interference + instance.channel.noise_power)
    rates = fbl_rate(sinr, instance.fbl, clamp=True)
    per_user = np.zeros((powers.shape[0], instance.partition.num_users))
    for g, k in enumerate(users):
        per_user[:, k] += rates[:, g]
    return per_user.min(axis=1)


def _axis(resolution: float) -> np.ndarray:
    n = int(round(1.0 / resolution))
    if n < 1 or not math.isclose(n * resolution, 1.0, rel_tol=1e-9):
        raise ValueError("resolution must be 1/n for a positive integer n")
    return np.linspace(0.0, 1.0, n + 1)


def _powers_from_fractions(instance: MmfInstance, levels: dict, split: float | np.ndarray):
    # levels: user -> fraction of budget, split: share of a splitting user on its first part
    P = instance.budget
    cols = []
    for s in instance.order:
        lvl = levels[s.user] * P
        if s.part == WHOLE:
            cols.append(lvl)
        elif s.part == SPLIT1:
            cols.append(lvl * split)
        else:
            cols.append(lvl * (1.0 - split))
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def grid_oracle_k2(instance: MmfInstance, resolution: float = 1e-3, exhaustive: bool = False,
                   solver_value: float | None = None) -> OracleReport:
    """Grid search over per-user power fractions for two users.

    The search variables are each user's fraction of the budget and, for a
    splitting user, the share of its power on the first part. Rates are the
    exact clamped model rates.

    With ``exhaustive=False`` the user owning the first-decoded stream is
    pinned to the full budget. This loses nothing: that stream interferes
    with no other stream, so raising its power only raises its own rate, and
    the clamped rate is non-decreasing in SINR. TIN has no such stream and is
    always searched over both levels. ``exhaustive=True`` grids every
    variable, which is cubic in ``1/resolution`` for a splitting instance.
    """
    if instance.partition.num_users != 2:
        raise ValueError("grid oracle supports exactly two users")
    if len(instance.partition.splitting) > 1:
        raise ValueError("grid oracle supports at most one splitting user")
    axis = _axis(resolution)
    users = (0, 1)
    pinned = None
    if not exhaustive and instance.mode == "sic":
        pinned = instance.order.streams[0].user
    splitting = instance.partition.splitting
    dims = {k: (np.ones(1) if k == pinned else axis) for k in users}
    split_axis = axis if splitting else np.ones(1)

    shape = (dims[0].size, dims[1].size, split_axis.size)
    mesh = np.meshgrid(dims[0], dims[1], split_axis, indexing="ij")
    flat = [m.reshape(-1) for m in mesh]
    values = np.empty(flat[0].size)
    for lo in range(0, values.size, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        p = _powers_from_fractions(instance, {0: flat[0][sl], 1: flat[1][sl]}, flat[2][sl])
        values[sl] = batch_min_rate(instance, p)
    grid = values.reshape(shape)
    step = 0.0
    for ax in range(3):
        if shape[ax] > 1:
            step = max(step, float(np.max(np.abs(np.diff(grid, axis=ax)))))
    best = int(np.argmax(values))
    arg = _powers_from_fractions(instance, {0: flat[0][best], 1: flat[1][best]}, flat[2][best])
    report = OracleReport(float(values[best]), np.asarray(arg), int(values.size), step_bound=step)
    if solver_value is not None:
        report.delta = report.best_value - float(solver_value)
    return report


def all_orders(instance: MmfInstance):
    """Every permutation of the instance's streams, heuristic order first."""
    yield instance.order
    for perm in itertools.permutations(instance.order.streams):
        if perm != instance.order.streams:
            yield DecodingOrder(perm)


def order_oracle(instance: MmfInstance, config: SolverConfig = SolverConfig()) -> OracleReport:
    """Solve every decoding order with SCA and report the best.

    ``heuristic_value`` holds the value of the instance's own order, so
    ``shortfall`` measures how much the heuristic order loses.
    """
    if instance.mode != "sic":
        raise ValueError("decoding orders only apply to SIC instances")
    S = instance.num_streams
    if S > MAX_ORDER_STREAMS:
        raise ValueError(f"{S} streams give {math.factorial(S)} orders; limit is {MAX_ORDER_STREAMS} streams")
    best_value, best_order, count = -math.inf, None, 0
    heuristic = math.nan
    for order in all_orders(instance):
        value = sca_solve(instance.with_order(order), config).t_star
        if count == 0:
            heuristic = value
        count += 1
        if value > best_value + 1e-12:
            best_value, best_order = value, order
    report = OracleReport(best_value, best_order, count, heuristic_value=heuristic)
    report.delta = best_value - heuristic
    return report


@dataclass
class TangentReport:
    passed: bool
    samples: int
    violations: int
    max_violation: float
    first_failure: tuple[float, float] | None
    tangency_error: float
    concave: bool


def _sqrt_v(rho):
    return np.sqrt(dispersion(rho))


def _tangent(rho, rho_n):
    v_n = dispersion(rho_n)
    return np.sqrt(v_n) + (rho - rho_n) * (1.0 + rho_n) ** -3 / np.sqrt(v_n)


def tangent_bound_check(samples: int = 10_000, rho_range: tuple[float, float] = (0.0, 1e3),
                        seed: int = 0, tol: float = 1e-9, flipped: bool = False) -> TangentReport:
    """Sampled check that the tangent of ``sqrt(V)`` lies above ``sqrt(V)``.

    Draws ``(rho, rho_n)`` uniformly from the half-open interval
    ``(lo, hi]``, checks the bound at each pair, tangency at ``rho = rho_n``
    and a negative second difference of ``sqrt(V)`` along a log grid.
    ``flipped`` asserts the reversed inequality as a negative control.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    lo, hi = rho_range
    rng = np.random.default_rng(seed)
    # 1 - u lies in (0, 1], so draws stay in (lo, hi]
    rho = lo + (hi - lo) * (1.0 - rng.random(samples))
    rho_n = lo + (hi - lo) * (1.0 - rng.random(samples))
    gap = _tangent(rho, rho_n) - _sqrt_v(rho)
    violation = gap if flipped else -gap
    bad = np.flatnonzero(violation > tol)
    first = (float(rho[bad[0]]), float(rho_n[bad[0]])) if bad.size else None

    tangency = float(np.max(np.abs(_tangent(rho_n, rho_n) - _sqrt_v(rho_n))))
    x = np.geomspace(max(lo, 1e-6), hi, 2001)
    f = _sqrt_v(x)
    # second divided difference on a non-uniform grid
    h0, h1 = np.diff(x)[:-1], np.diff(x)[1:]
    second = 2.0 * (h0 * f[2:] - (h0 + h1) * f[1:-1] + h1 * f[:-2]) / (h0 * h1 * (h0 + h1))
    concave = bool(np.all(second < 0))
    return TangentReport(
        passed=bool(bad.size == 0 and tangency <= 1e-12 and concave),
        samples=samples,
        violations=int(bad.size),
        max_violation=float(max(violation.max(), 0.0)),
        first_failure=first,
        tangency_error=tangency,
        concave=concave,
    )
