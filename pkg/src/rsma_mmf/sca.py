"""Successive convex approximation for max-min fair power allocation.

Each iteration linearizes the two non-convex pieces of the slack-variable
reformulation around the current point:

* ``sqrt(V(rho))`` is replaced by its tangent, an upper bound because
  ``sqrt(V)`` is concave, so the approximated rates never overstate;
* the SINR constraint ``gamma_g(p) >= rho_g`` is replaced by an affine cut
  that is tight at the expansion point.

The convex subproblem is solved with :mod:`rsma_mmf.kernel`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .model import (
    SPLIT1,
    SPLIT2,
    WHOLE,
    ChannelState,
    DecodingOrder,
    FblParams,
    PowerAllocation,
    UserPartition,
    build_decoding_order,
    compute_sinr,
    fbl_rate,
    user_min_rate,
)

RHO_FLOOR = 1e-9
POWER_FLOOR = 1e-12
# first-part shares tried when a solution leaves a second part silent
SILENT_SPLIT_FRACTIONS = (0.99, 0.9)


class SubproblemInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class MmfInstance:
    channel: ChannelState
    partition: UserPartition
    order: DecodingOrder
    fbl: FblParams
    budget: float
    mode: str = "sic"

    def __post_init__(self):
        if self.channel.num_users != self.partition.num_users:
            raise ValueError("channel and partition disagree on the number of users")
        self.order.validate(self.partition)
        if not self.budget > 0:
            raise ValueError("power budget must be positive")
        if self.mode not in ("sic", "tin"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "tin" and self.partition.splitting:
            raise ValueError("tin mode does not support message splitting")

    @classmethod
    def heuristic(cls, channel: ChannelState, split_count: int, fbl: FblParams,
                  budget: float, mode: str = "sic") -> "MmfInstance":
        """Instance splitting the strongest users, with the heuristic decoding order."""
        partition = UserPartition.strongest(channel, split_count)
        return cls(channel, partition, build_decoding_order(partition, channel), fbl, budget, mode)

    @property
    def num_streams(self) -> int:
        return len(self.order)

    @property
    def stream_gains(self) -> np.ndarray:
        return self.channel.gains[self.order.users]

    def interferers(self, g: int) -> np.ndarray:
        S = self.num_streams
        if self.mode == "sic":
            return np.arange(g + 1, S)
        return np.delete(np.arange(S), g)

    def with_order(self, order: DecodingOrder) -> "MmfInstance":
        return MmfInstance(self.channel, self.partition, order, self.fbl, self.budget, self.mode)

    def true_rates(self, powers, clamp: bool = True):
        """Per-stream and per-user rates ``(r, R, min R)`` at the given stream powers."""
        sinr = compute_sinr(self.order, np.asarray(powers, dtype=float), self.channel, self.mode)
        r = np.asarray(fbl_rate(sinr, self.fbl, clamp=clamp))
        R, worst = user_min_rate(r, self.order, self.partition)
        return r, R, worst


@dataclass(frozen=True)
class SolverConfig:
    tol_tau: float = 1e-3
    max_sca_iters: int = 200
    subproblem_tol: float | None = None
    init: str = "equal_split"
    num_starts: int = 1
    rho_floor: float = RHO_FLOOR
    seed: int = 0

    def __post_init__(self):
        if not self.tol_tau > 0:
            raise ValueError("tol_tau must be positive")
        if self.max_sca_iters < 1 or self.num_starts < 1:
            raise ValueError("iteration cap and start count must be positive")

    @property
    def sub_tol(self) -> float:
        return self.tol_tau / 10 if self.subproblem_tol is None else self.subproblem_tol


def dispersion_tangent(rho_n):
    """Intercept ``sqrt(V(rho_n))`` and slope of the tangent of ``sqrt(V)`` at ``rho_n``."""
    rho_n = np.asarray(rho_n, dtype=float)
    if np.any(rho_n <= 0):
        raise ValueError("expansion point must be positive")
    v = 1.0 - (1.0 + rho_n) ** -2
    root = np.sqrt(v)
    return root, (1.0 + rho_n) ** -3 / root


def linearize_dispersion(rho, rho_n):
    """Tangent of ``sqrt(1 - (1 + rho)^-2)`` at ``rho_n``, evaluated at ``rho``."""
    intercept, slope = dispersion_tangent(rho_n)
    out = intercept + (np.asarray(rho, dtype=float) - rho_n) * slope
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LinearizationState:
    iteration: int
    powers: np.ndarray
    rho: np.ndarray
    phi_intercept: np.ndarray
    phi_slope: np.ndarray

    @classmethod
    def at(cls, powers, rho, iteration: int = 0) -> "LinearizationState":
        rho = np.asarray(rho, dtype=float)
        intercept, slope = dispersion_tangent(rho)
        return cls(iteration, np.asarray(powers, dtype=float), rho, intercept, slope)

    def phi(self, rho) -> np.ndarray:
        return self.phi_intercept + (np.asarray(rho, dtype=float) - self.rho) * self.phi_slope


@dataclass(frozen=True)
class SinrCut:
    """Affine constraint ``power_coef . p + rho_coef * rho_g + const <= 0``."""

    stream: int
    power_coef: np.ndarray
    rho_coef: float
    const: float

    def lhs(self, powers, rho_g: float) -> float:
        return float(self.power_coef @ np.asarray(powers, dtype=float) + self.rho_coef * rho_g + self.const)


def linearize_sinr_constraint(g: int, state: LinearizationState, instance: MmfInstance) -> SinrCut:
    """Affine inner model of ``gamma_g(p) >= rho_g`` around ``(state.powers, state.rho)``.

    ``I_g(p) - p_g h_g / rho_n + (rho_g - rho_n) p_n h_g / rho_n^2 <= 0`` where
    ``I_g`` is interference plus noise.
    """
    rho_n = float(state.rho[g])
    if rho_n <= 0:
        raise ValueError("expansion SINR must be positive")
    h = instance.stream_gains
    coef = np.zeros(instance.num_streams)
    coef[instance.interferers(g)] = h[instance.interferers(g)]
    coef[g] = -h[g] / rho_n
    rho_coef = float(state.powers[g] * h[g] / rho_n**2)
    return SinrCut(g, coef, rho_coef, instance.channel.noise_power - rho_coef * rho_n)


def _user_streams(instance: MmfInstance) -> list[list[int]]:
    return [instance.order.streams_of(k) for k in range(instance.partition.num_users)]


def assemble_subproblem(state: LinearizationState, instance: MmfInstance) -> kernel.ConvexProgram:
    """Convex subproblem around ``state``.

    Variables are ``[q_0..q_{S-1}, rho_0..rho_{S-1}, t]`` with ``q = p / budget``.
    Affine rows are the S SINR cuts followed by the K power budgets; each cut
    is divided by its largest coefficient.
    """
    S = instance.num_streams
    if state.powers.shape != (S,) or state.rho.shape != (S,):
        raise ValueError("linearization state does not match the instance")
    n = 2 * S + 1
    t_idx = 2 * S
    P = instance.budget
    rows, consts, labels = [], [], []
    for g in range(S):
        cut = linearize_sinr_constraint(g, state, instance)
        row = np.zeros(n)
        row[:S] = cut.power_coef * P
        row[S + g] = cut.rho_coef
        scale = np.max(np.abs(row))
        rows.append(row / scale)
        consts.append(cut.const / scale)
        labels.append(f"sinr{g}")
    for k, streams in enumerate(_user_streams(instance)):
        row = np.zeros(n)
        row[streams] = 1.0
        rows.append(row)
        consts.append(-1.0)
        labels.append(f"budget{k}")

    c = instance.fbl.penalty
    log_rate = []
    for streams in _user_streams(instance):
        coef = np.zeros(n)
        const = 0.0
        for g in streams:
            coef[S + g] = c * state.phi_slope[g]
            const += c * (state.phi_intercept[g] - state.phi_slope[g] * state.rho[g])
        log_rate.append(kernel.LogRateConstraint(tuple(S + g for g in streams), coef, const, t_idx))

    lower = np.concatenate([np.zeros(S), np.full(S, RHO_FLOOR), [-np.inf]])
    return kernel.ConvexProgram(n, np.array(rows), np.array(consts), log_rate, lower, t_idx,
                                tuple(labels))


def _interior_start(state: LinearizationState, instance: MmfInstance,
                    program: kernel.ConvexProgram, eta: float = 1e-3):
    """Cheap strictly feasible guess near the expansion point (phase 1 is the fallback)."""
    S = instance.num_streams
    P = instance.budget
    center = np.zeros(S)
    for streams in _user_streams(instance):
        center[streams] = 0.5 / len(streams)
    q = (1.0 - eta) * np.minimum(state.powers / P, 1.0) + eta * center
    A = program.affine_coef[:S]
    b = program.affine_const[:S]
    x = np.zeros(program.num_vars)
    x[:S] = q
    rho_coef = A[np.arange(S), S + np.arange(S)]
    rest = A[:, :S] @ q + b
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_max = np.where(rho_coef > 0, -rest / rho_coef, state.rho * 2.0 + 1.0)
    if np.any(~np.isfinite(rho_max)) or np.any(rho_max <= RHO_FLOOR):
        return None
    rho = RHO_FLOOR + (1.0 - eta) * (rho_max - RHO_FLOOR)
    x[S:2 * S] = rho
    rate = [np.sum(np.log2(1.0 + rho[np.array(con.indices) - S]))
            - con.penalty_coef @ x - con.penalty_const for con in program.log_rate]
    x[2 * S] = min(rate) - 0.05 * (1.0 + abs(min(rate)))
    return x


def initialize(instance: MmfInstance, policy: str = "equal_split", rng=None,
               rho_floor: float = RHO_FLOOR):
    """Initial stream powers and consistent SINR slack values ``(p0, rho0)``.

    ``equal_split`` gives each part of a split message half the budget and
    every whole stream the full budget. ``full_first`` puts 99% of a
    splitting user's power on its first part. ``random`` draws the split
    fraction uniformly from ``rng``.
    """
    P = instance.budget
    parts = [s.part for s in instance.order]
    p0 = np.full(instance.num_streams, P)
    split = [g for g, part in enumerate(parts) if part != WHOLE]
    if policy == "equal_split":
        p0[split] = P / 2
    elif policy == "full_first":
        for g in split:
            p0[g] = 0.99 * P if parts[g] == SPLIT1 else 0.01 * P
    elif policy == "random":
        rng = np.random.default_rng(0) if rng is None else rng
        for j in instance.partition.splitting:
            frac = rng.uniform(0.02, 0.98)
            a = instance.order.index((j, SPLIT1))
            b = instance.order.index((j, SPLIT2))
            p0[a], p0[b] = frac * P, (1 - frac) * P
    else:
        raise ValueError(f"unknown initialization policy {policy!r}")
    rho0 = np.maximum(compute_sinr(instance.order, p0, instance.channel, instance.mode), rho_floor)
    return p0, rho0


@dataclass
class MmfSolution:
    t_star: float
    powers: PowerAllocation
    user_rates: np.ndarray
    iterations: int
    converged: bool
    certificate: float = 0.0
    history: list[float] = field(default_factory=list)
    subproblem_history: list[float] = field(default_factory=list)
    order: DecodingOrder | None = None


@dataclass(frozen=True)
class CertificateReport:
    user_rates: np.ndarray
    min_rate: float
    rate_shortfall: float
    budget_violation: float
    negative_power: float

    @property
    def max_violation(self) -> float:
        return max(self.rate_shortfall, self.budget_violation, self.negative_power)


def certify_solution(sol: MmfSolution, instance: MmfInstance) -> CertificateReport:
    """Re-evaluate a solution through the system model.

    Reports how far ``t_star`` exceeds the true (clamped) user rates and how
    far the powers exceed the budget.
    """
    powers = np.asarray(sol.powers.powers, dtype=float)
    _, R, worst = instance.true_rates(powers, clamp=True)
    alloc = PowerAllocation(np.maximum(powers, 0.0), instance.budget)
    return CertificateReport(
        user_rates=R,
        min_rate=worst,
        rate_shortfall=float(max(0.0, np.max(sol.t_star - R))),
        budget_violation=alloc.budget_violation(instance.order, instance.partition.num_users),
        negative_power=float(max(0.0, -powers.min())),
    )


def _project_budget(p, instance: MmfInstance):
    # strictly positive powers keep every SINR cut bounded in its rho variable
    p = np.maximum(p, POWER_FLOOR * instance.budget)
    users = instance.order.users
    totals = np.bincount(users, weights=p, minlength=instance.partition.num_users)
    over = np.maximum(totals / instance.budget, 1.0)
    return p / over[users]


def _raw_min(instance: MmfInstance, p) -> float:
    return instance.true_rates(p, clamp=False)[2]


def _sca_run(instance: MmfInstance, config: SolverConfig, p0) -> MmfSolution:
    p = _project_budget(np.asarray(p0, dtype=float), instance)
    t = _raw_min(instance, p)
    history, sub_history = [t], []
    converged = False
    iterations = 0
    for n in range(1, config.max_sca_iters + 1):
        iterations = n
        rho = np.maximum(compute_sinr(instance.order, p, instance.channel, instance.mode),
                         config.rho_floor)
        state = LinearizationState.at(p, rho, n)
        program = assemble_subproblem(state, instance)
        result = kernel.solve_max_t(program, config.sub_tol, _interior_start(state, instance, program))
        if result.status == kernel.INFEASIBLE:
            if n == 1:
                raise SubproblemInfeasible("subproblem infeasible at the initial point")
            break
        sub_history.append(result.objective)
        candidate = _project_budget(result.x[:instance.num_streams] * instance.budget, instance)
        t_new = _raw_min(instance, candidate)
        # the affine SINR cut is only first-order accurate away from the
        # expansion point; damp the step until the true min rate does not drop
        alpha = 1.0
        while t_new < t and alpha > 1e-6:
            alpha *= 0.5
            trial = p + alpha * (candidate - p)
            t_trial = _raw_min(instance, trial)
            if t_trial >= t:
                candidate, t_new = trial, t_trial
        if t_new < t:
            candidate, t_new = p, t
        step = t_new - t
        p, t = candidate, t_new
        history.append(t)
        if abs(step) <= config.tol_tau:
            converged = True
            break
    _, R, _ = instance.true_rates(p, clamp=True)
    return MmfSolution(t, PowerAllocation(p, instance.budget), R, iterations, converged,
                       history=history, subproblem_history=sub_history, order=instance.order)


def _split_pairs(instance: MmfInstance) -> list[tuple[int, int]]:
    return [(instance.order.index((j, SPLIT1)), instance.order.index((j, SPLIT2)))
            for j in instance.partition.splitting]


def reactivate_silent_splits(powers, instance: MmfInstance,
                             fractions=SILENT_SPLIT_FRACTIONS) -> list[np.ndarray]:
    """``powers`` plus copies that move a small share onto silent second parts.

    The finite-blocklength penalty makes a nearly silent stream lose rate, so
    a zero second part is a local optimum that SCA cannot leave on its own.
    """
    powers = np.asarray(powers, dtype=float)
    silent = [(a, b) for a, b in _split_pairs(instance) if powers[b] <= 1e-6 * instance.budget]
    out = [powers]
    for f in fractions if silent else ():
        q = powers.copy()
        for a, b in silent:
            total = q[a] + q[b]
            q[a], q[b] = f * total, (1.0 - f) * total
        out.append(q)
    return out


def fold_second_parts(powers, instance: MmfInstance) -> np.ndarray | None:
    """Move every active second part onto its first part, or None if all are silent."""
    q = np.array(powers, dtype=float)
    active = [(a, b) for a, b in _split_pairs(instance) if q[b] > 1e-6 * instance.budget]
    if not active:
        return None
    for a, b in active:
        q[a], q[b] = q[a] + q[b], 0.0
    return q


def sca_solve(instance: MmfInstance, config: SolverConfig = SolverConfig(),
              initial_powers=None) -> MmfSolution:
    """Max-min rate power allocation for a fixed decoding order.

    Runs one SCA pass per start (the configured policy, then ``num_starts - 1``
    random split fractions, plus ``initial_powers`` when given) and keeps the
    best certified result. That result is then rerun with silent second
    parts switched on and with active second parts folded into the first. ``initial_powers`` is one power vector or a list
    of them.
    """
    rng = np.random.default_rng(config.seed)
    starts = [initialize(instance, config.init, rng, config.rho_floor)[0]]
    for _ in range(config.num_starts - 1):
        starts.append(initialize(instance, "random", rng, config.rho_floor)[0])
    if initial_powers is not None:
        extra = np.asarray(initial_powers, dtype=float)
        starts.extend(extra.reshape(-1, instance.num_streams))
    best = None
    for p0 in starts:
        sol = _sca_run(instance, config, p0)
        if best is None or sol.t_star > best.t_star:
            best = sol
    # a split and an unsplit user are separate local optima; try the other side
    extra = reactivate_silent_splits(best.powers.powers, instance)[1:]
    folded = fold_second_parts(best.powers.powers, instance)
    if folded is not None:
        extra.append(folded)
    for p0 in extra:
        sol = _sca_run(instance, config, p0)
        if sol.t_star > best.t_star:
            best = sol
    best.certificate = certify_solution(best, instance).max_violation
    return best
