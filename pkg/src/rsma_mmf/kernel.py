"""Barrier-method solver for small "maximize t" programs.

The programs have two constraint families over ``x`` in R^n:

* affine: ``a . x + b <= 0`` (plus per-variable lower bounds),
* log-rate: ``sum_{i in S} log2(1 + x_i) - (c . x + d) - x_t >= 0``,

and the objective ``maximize x_t``. Every constraint is convex, so a
logarithmic barrier with Newton centering solves them to a KKT residual
that can be checked independently with :func:`kkt_residual`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

LN2 = math.log(2.0)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

STRICT_SLACK = 1e-8


@dataclass(frozen=True)
class LogRateConstraint:
    """``sum_{i in indices} log2(1 + x_i) - (penalty_coef . x + penalty_const) - x_t >= 0``."""

    indices: tuple[int, ...]
    penalty_coef: np.ndarray
    penalty_const: float
    t_index: int


@dataclass
class ConvexProgram:
    num_vars: int
    affine_coef: np.ndarray
    affine_const: np.ndarray
    log_rate: list[LogRateConstraint]
    lower_bounds: np.ndarray
    objective_index: int
    row_labels: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.num_vars
        self.affine_coef = np.asarray(self.affine_coef, dtype=float).reshape(-1, n)
        self.affine_const = np.asarray(self.affine_const, dtype=float).reshape(-1)
        if self.affine_coef.shape[0] != self.affine_const.size:
            raise ValueError("affine coefficient rows and constants differ in length")
        self.lower_bounds = np.asarray(self.lower_bounds, dtype=float).reshape(-1)
        if self.lower_bounds.size != n:
            raise ValueError("need one lower bound per variable")
        if not 0 <= self.objective_index < n:
            raise ValueError("objective index out of range")
        for con in self.log_rate:
            if con.t_index != self.objective_index:
                raise ValueError("every log-rate constraint must involve the objective variable")
            if np.asarray(con.penalty_coef).size != n:
                raise ValueError("penalty coefficient vector has the wrong length")
            for i in con.indices:
                if not self.lower_bounds[i] > -1:
                    raise ValueError(f"log argument x[{i}] needs a lower bound above -1")

    @property
    def num_affine(self) -> int:
        return self.affine_const.size

    @property
    def bounded_vars(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.lower_bounds))

    @property
    def num_constraints(self) -> int:
        return self.num_affine + self.bounded_vars.size + len(self.log_rate)


@dataclass
class KernelResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    multipliers: np.ndarray = None
    duality_gap: float = math.inf
    newton_steps: int = 0
    path: list[float] = field(default_factory=list)


class _Compiled:
    """Constraint data in the flat order ``affine rows, bound rows, log rows``.

    Log rows are stored as ``f(x) = C x + d - M ln(1 + x) / ln 2 <= 0``.
    """

    def __init__(self, G, h, C, d, M, objective):
        self.G, self.h = G, h
        self.C, self.d, self.M = C, d, M
        self.args = np.flatnonzero(M.any(axis=0)) if M.size else np.zeros(0, dtype=int)
        self.c = objective
        self._diag = np.diag_indices(G.shape[1])

    @classmethod
    def from_program(cls, program: ConvexProgram):
        n = program.num_vars
        bounded = program.bounded_vars
        B = np.zeros((bounded.size, n))
        B[np.arange(bounded.size), bounded] = -1.0
        G = np.vstack([program.affine_coef, B])
        h = np.concatenate([program.affine_const, program.lower_bounds[bounded]])
        L = len(program.log_rate)
        C = np.zeros((L, n))
        d = np.zeros(L)
        M = np.zeros((L, n))
        for l, con in enumerate(program.log_rate):
            C[l] = con.penalty_coef
            C[l, con.t_index] += 1.0
            d[l] = con.penalty_const
            M[l, list(con.indices)] = 1.0
        c = np.zeros(n)
        c[program.objective_index] = -1.0
        return cls(G, h, C, d, M, c)

    @property
    def m(self):
        return self.h.size + self.d.size

    def values(self, x):
        """Constraint values (all should be ``<= 0``), or None outside the log domain."""
        lx = np.zeros_like(x)
        if self.args.size:
            z = 1.0 + x[self.args]
            if z.min() <= 0:
                return None
            lx[self.args] = np.log(z)
        return np.concatenate([self.G @ x + self.h, self.C @ x + self.d - (self.M @ lx) / LN2])

    def jacobian(self, x):
        w = np.zeros_like(x)
        w[self.args] = 1.0 / ((1.0 + x[self.args]) * LN2)
        return np.vstack([self.G, self.C - self.M * w]), w

    def barrier_derivatives(self, x, scale, vals=None):
        if vals is None:
            vals = self.values(x)
        slack = -vals
        J, w = self.jacobian(x)
        inv = 1.0 / slack
        grad = scale * self.c + J.T @ inv
        Js = J * inv[:, None]
        H = Js.T @ Js
        k = self.h.size
        if self.d.size:
            # curvature of the -log2(1+x) terms
            H[self._diag] += (self.M.T @ inv[k:]) * w * w * LN2
        return grad, H

    def barrier_value(self, x, scale):
        vals = self.values(x)
        if vals is None or vals.max() >= 0:
            return math.inf, vals
        return scale * float(self.c @ x) - float(np.sum(np.log(-vals))), vals


def _newton_direction(grad, H):
    try:
        return np.linalg.solve(H, -grad)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, -grad, rcond=None)[0]


def _center(prob: _Compiled, x, scale, grad_tol, max_steps=100):
    """Minimize ``scale * c.x + barrier`` from the strictly feasible ``x``.

    Returns the point, its constraint values, the barrier gradient, the
    number of Newton steps and whether centering converged.
    """
    phi, vals = prob.barrier_value(x, scale)
    steps = 0
    while True:
        grad, H = prob.barrier_derivatives(x, scale, vals)
        if np.max(np.abs(grad)) <= grad_tol:
            return x, vals, grad, steps, True
        if steps >= max_steps:
            return x, vals, grad, steps, False
        dx = _newton_direction(grad, H)
        decrement = float(-grad @ dx)
        if not decrement > 1e-14:
            # converged to rounding level (or H is not usable)
            return x, vals, grad, steps, decrement >= 0
        steps += 1
        alpha = 1.0
        pure = decrement < 0.0625  # lambda < 1/4: quadratic region, skip Armijo
        for _ in range(80):
            trial = x + alpha * dx
            trial_phi, trial_vals = prob.barrier_value(trial, scale)
            if trial_phi < math.inf and (pure or trial_phi <= phi - 0.01 * alpha * decrement):
                break
            alpha *= 0.5
        else:
            return x, vals, grad, steps, False
        x, phi, vals = trial, trial_phi, trial_vals


def _path_follow(prob: _Compiled, x, tol, residual_fn=None, stop=None,
                 scale=10.0, factor=10.0, max_outer=40):
    """Barrier path-following.

    Returns ``(x, vals, multipliers, scale, residuals, steps, done)`` where
    ``done`` means the gap bound ``m / scale`` and the KKT residual are both
    within ``tol`` (or ``stop`` fired).
    """
    m = prob.m
    residuals = []
    total = 0
    lam = None
    for _ in range(max_outer):
        x, vals, grad, steps, centered = _center(prob, x, scale, grad_tol=0.1 * tol * scale)
        total += steps
        lam = 1.0 / (scale * -vals)
        if residual_fn is None:
            residual = max(float(np.max(np.abs(grad))) / scale, 1.0 / scale)
        else:
            lam, residual = residual_fn(x, vals, lam, scale)
        residuals.append(residual)
        if stop is not None and stop(x, vals, scale, centered):
            return x, vals, lam, scale, residuals, total, True
        if m / scale <= tol and residual <= tol:
            return x, vals, lam, scale, residuals, total, True
        scale *= factor
    return x, vals, lam, scale, residuals, total, False


def _strictly_feasible(prob: _Compiled, x) -> bool:
    vals = prob.values(x)
    return vals is not None and bool(np.all(vals < -STRICT_SLACK))


def _domain_start(program: ConvexProgram, x0):
    n = program.num_vars
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).reshape(n)
    lb = program.lower_bounds
    for con in program.log_rate:
        for i in con.indices:
            if not x[i] > lb[i]:
                x[i] = lb[i] + 1.0 if lb[i] > -1.0 else 0.0
    return x


def phase1_point(program: ConvexProgram, x0=None):
    """Find a point satisfying every constraint with slack at least 1e-8.

    Minimizes the largest constraint violation ``s`` over ``(x, s)`` inside a
    large box around the start point. Returns ``(x, status)`` with status
    ``optimal`` (x strictly feasible), ``infeasible`` (the minimal violation
    is certified non-negative) or ``max_iter``.
    """
    prob = _Compiled.from_program(program)
    x = _domain_start(program, x0)
    if _strictly_feasible(prob, x):
        return x, OPTIMAL
    n = program.num_vars
    radius = 1e4 * (1.0 + float(np.max(np.abs(x))))
    # augmented variables (x, s): relaxed constraints f(x) - s <= 0, hard box |x - x0| <= radius
    G = np.hstack([prob.G, -np.ones((prob.h.size, 1))])
    box = np.vstack([np.hstack([np.eye(n), np.zeros((n, 1))]),
                     np.hstack([-np.eye(n), np.zeros((n, 1))])])
    G = np.vstack([G, box])
    h = np.concatenate([prob.h, -x - radius, x - radius])
    C = np.hstack([prob.C, -np.ones((prob.d.size, 1))])
    M = np.hstack([prob.M, np.zeros((prob.d.size, 1))])
    c = np.zeros(n + 1)
    c[n] = 1.0
    aug = _Compiled(G, h, C, prob.d, M, c)
    s0 = float(np.max(prob.values(x))) + 1.0
    z = np.append(x, s0)

    def finished(z, vals, scale, centered):
        if z[n] < -STRICT_SLACK and _strictly_feasible(prob, z[:n]):
            return True
        # at a center, z[n] - m / scale lower-bounds the minimal violation
        return centered and (z[n] - aug.m / scale > -STRICT_SLACK or aug.m / scale <= 1e-12)

    z, vals, lam, scale, _, _, done = _path_follow(aug, z, tol=1e-12, stop=finished)
    if z[n] < -STRICT_SLACK and _strictly_feasible(prob, z[:n]):
        return z[:n], OPTIMAL
    if done:
        return z[:n], INFEASIBLE
    return z[:n], MAX_ITER


def solve_max_t(program: ConvexProgram, tol: float = 1e-8, x0=None) -> KernelResult:
    """Maximize ``x[objective_index]`` with a log-barrier path-following method.

    Barrier weight starts at 10 and grows by 10 per outer step; the solve
    stops once the duality-gap bound ``m / weight`` and the KKT residual
    are both below ``tol``. ``x0`` is an optional start; if it is not
    strictly feasible a phase-1 solve runs first.
    """
    prob = _Compiled.from_program(program)
    x = None if x0 is None else np.array(x0, dtype=float).reshape(program.num_vars)
    if x is None or not _strictly_feasible(prob, x):
        x, status = phase1_point(program, x)
        if status != OPTIMAL:
            return KernelResult(x, float(x[program.objective_index]), math.inf, status)

    def residual_fn(x, vals, lam, scale):
        best = _kkt_residual(prob, x, lam, vals)
        if best <= tol or prob.m / scale > tol:
            return lam, best
        # barrier multipliers degrade once slacks approach rounding level;
        # active-set NNLS multipliers are the fallback
        alt = _nnls_multipliers(prob, x, vals, math.sqrt(prob.m / scale))
        alt_residual = _kkt_residual(prob, x, alt, vals)
        if alt_residual < best:
            return alt, alt_residual
        return lam, best

    x, vals, lam, scale, residuals, steps, done = _path_follow(prob, x, tol, residual_fn)
    residual = residuals[-1]
    status = OPTIMAL if done and residual <= tol else MAX_ITER
    return KernelResult(x, float(x[program.objective_index]), residual, status,
                        multipliers=lam, duality_gap=prob.m / scale,
                        newton_steps=steps, path=residuals)


def constraint_values(program: ConvexProgram, x) -> np.ndarray:
    """All constraint values in flat order (affine, bounds, log-rate); feasible iff all <= 0."""
    vals = _Compiled.from_program(program).values(np.asarray(x, dtype=float))
    if vals is None:
        raise ValueError("point lies outside the domain of the log terms")
    return vals


def _kkt_residual(prob: _Compiled, x, lam, vals) -> float:
    J, _ = prob.jacobian(x)
    stationarity = prob.c + J.T @ lam
    return float(max(np.max(np.abs(stationarity)),
                     np.max(np.abs(lam * vals), initial=0.0),
                     np.max(vals, initial=0.0),
                     np.max(-lam, initial=0.0)))


def _nnls_multipliers(prob: _Compiled, x, vals, active_tol) -> np.ndarray:
    J, _ = prob.jacobian(x)
    active = np.flatnonzero(vals >= -active_tol)
    lam = np.zeros(vals.size)
    if active.size:
        lam[active] = nnls(J[active].T, -prob.c)[0]
    return lam


def kkt_residual(program: ConvexProgram, x, multipliers) -> float:
    """Largest of stationarity, complementary slackness, primal and dual violation."""
    prob = _Compiled.from_program(program)
    x = np.asarray(x, dtype=float)
    vals = prob.values(x)
    if vals is None:
        return math.inf
    return _kkt_residual(prob, x, np.asarray(multipliers, dtype=float), vals)


def estimate_multipliers(program: ConvexProgram, x, active_tol: float = 1e-6) -> np.ndarray:
    """Non-negative least-squares multipliers supported on the near-active constraints."""
    prob = _Compiled.from_program(program)
    x = np.asarray(x, dtype=float)
    vals = prob.values(x)
    if vals is None:
        raise ValueError("point lies outside the domain of the log terms")
    return _nnls_multipliers(prob, x, vals, active_tol)


def affine_program(num_vars: int, rows: Sequence[tuple[Sequence[float], float]],
                   objective_index: int, lower_bounds=None, log_rate=()) -> ConvexProgram:
    """Convenience constructor from ``(coefficients, constant)`` pairs."""
    coef = np.array([r[0] for r in rows], dtype=float).reshape(-1, num_vars)
    const = np.array([r[1] for r in rows], dtype=float)
    lb = np.full(num_vars, -np.inf) if lower_bounds is None else lower_bounds
    return ConvexProgram(num_vars, coef, const, list(log_rate), lb, objective_index)
