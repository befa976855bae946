"""Seeded Monte Carlo sweeps over Rayleigh fading channels.

A work unit is one channel realization at one (SNR, blocklength) point. All
schemes of a unit see the same channel, NOMA is solved first and its
solution (together with every smaller RSMA solution) warm-starts RSMA.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import NOMA, RSMA, TIN, SchemeKind, noma_solve, rsma_solve, tin_solve
from .model import ChannelState, FblParams
from .oracle import MAX_ORDER_STREAMS, all_orders
from .sca import MmfInstance, MmfSolution, SolverConfig, sca_solve

CSV_HEADER = ("scheme", "K", "split_count", "snr_db", "blocklength", "epsilon", "realization",
              "seed", "min_rate", "converged", "iterations", "wall_ms")
DEFAULT_SNR_DB = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
HEURISTIC = "heuristic"
EXHAUSTIVE = "exhaustive"


class ConfigError(ValueError):
    """Invalid sweep configuration."""


@dataclass(frozen=True)
class SweepConfig:
    """Grid of a Monte Carlo sweep.

    ``schemes`` names ``rsma``, ``noma`` and ``tin``; ``rsma`` is expanded
    over ``split_counts``. ``timing`` fills the ``wall_ms`` column, which
    otherwise stays 0 so that repeated runs write identical files.
    """

    snr_db_list: tuple[float, ...] = DEFAULT_SNR_DB
    blocklength_list: tuple[float, ...] = (math.inf,)
    epsilon: float = 1e-5
    num_users: int = 2
    split_counts: tuple[int, ...] = (1,)
    schemes: tuple[str, ...] = (RSMA, NOMA, TIN)
    realizations: int = 100
    seed: int = 0
    order_policy: str = HEURISTIC
    tol: float = 1e-3
    num_starts: int = 1
    timing: bool = False
    tin_full_power: bool = False

    def __post_init__(self):
        for name in ("snr_db_list", "blocklength_list", "split_counts", "schemes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.snr_db_list:
            raise ConfigError("SNR list is empty")
        if not self.blocklength_list:
            raise ConfigError("blocklength list is empty")
        if self.realizations < 1:
            raise ConfigError("realizations must be at least 1")
        if self.num_users < 1:
            raise ConfigError("need at least one user")
        if not self.schemes or len(set(self.schemes)) != len(self.schemes):
            raise ConfigError("schemes must be a non-empty list without repeats")
        for s in self.schemes:
            if s not in (RSMA, NOMA, TIN):
                raise ConfigError(f"unknown scheme {s!r}")
        if RSMA in self.schemes:
            if not self.split_counts:
                raise ConfigError("rsma needs at least one split count")
            for j in self.split_counts:
                if not 1 <= j <= self.num_users:
                    raise ConfigError(f"split count {j} outside [1, {self.num_users}]")
        if self.order_policy not in (HEURISTIC, EXHAUSTIVE):
            raise ConfigError(f"unknown order policy {self.order_policy!r}")
        if self.order_policy == EXHAUSTIVE:
            most = self.num_users + (max(self.split_counts) if RSMA in self.schemes else 0)
            if most > MAX_ORDER_STREAMS:
                raise ConfigError(f"exhaustive order needs at most {MAX_ORDER_STREAMS} streams, got {most}")
        try:
            for n in self.blocklength_list:
                FblParams(n, self.epsilon)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.tol > 0 or self.num_starts < 1:
            raise ConfigError("tol must be positive and num_starts at least 1")

    def scheme_kinds(self) -> list[SchemeKind]:
        kinds = []
        for s in self.schemes:
            if s == RSMA:
                kinds.extend(SchemeKind(RSMA, j) for j in sorted(set(self.split_counts)))
            else:
                kinds.append(SchemeKind(s))
        return kinds

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol_tau=self.tol, num_starts=self.num_starts, seed=self.seed)


@dataclass
class ResultRow:
    scheme: str
    K: int
    split_count: int
    snr_db: float
    blocklength: float
    epsilon: float
    realization: int
    seed: int
    min_rate: float
    converged: bool
    iterations: int
    wall_ms: float = 0.0
    error: str | None = None

    def __post_init__(self):
        if self.min_rate < 0:
            raise ValueError("min_rate must be non-negative")


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[ResultRow] = field(default_factory=list)

    @property
    def failed(self) -> list[ResultRow]:
        return [r for r in self.rows if r.error is not None]

    def cell_means(self) -> dict[tuple, float]:
        """Mean min rate per ``(scheme, split_count, snr_db, blocklength)``, skipping failed rows."""
        groups: dict[tuple, list[float]] = {}
        for r in self.rows:
            key = (r.scheme, r.split_count, r.snr_db, r.blocklength)
            groups.setdefault(key, [])
            if r.error is None:
                groups[key].append(r.min_rate)
        return {k: (float(np.mean(v)) if v else math.nan) for k, v in groups.items()}

    def values(self, scheme: str, split_count: int, snr_db: float, blocklength: float) -> np.ndarray:
        """Per-realization min rates of one cell, ordered by realization."""
        return np.array([r.min_rate for r in self.rows
                         if (r.scheme, r.split_count, r.snr_db, r.blocklength)
                         == (scheme, split_count, snr_db, blocklength)])


def realization_rng(seed: int, realization: int) -> np.random.Generator:
    """PCG64 stream of one realization, derived from the master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(realization,))))


def generate_rayleigh(K: int, realizations: int, seed: int) -> list[ChannelState]:
    """Rayleigh power gains ``|h|^2`` with ``h ~ CN(0, 1)``.

    Each realization draws ``(re, im)`` pairs user by user from its own
    stream, so the first ``K`` users of a realization do not depend on how
    many users are drawn in total.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    out = []
    for r in range(realizations):
        z = realization_rng(seed, r).standard_normal((K, 2)) / math.sqrt(2.0)
        out.append(ChannelState(np.sum(z * z, axis=1)))
    return out


def relative_gain(r_rsma: float, r_noma: float) -> float:
    """Percentage gain of ``r_rsma`` over ``r_noma``."""
    if r_noma == 0:
        raise ZeroDivisionError("relative gain undefined for a zero reference rate")
    return (r_rsma - r_noma) / r_noma * 100.0


def budget_from_snr(snr_db: float, noise_power: float = 1.0) -> float:
    return 10.0 ** (snr_db / 10.0) * noise_power


def best_order_solution(instance: MmfInstance, config: SolverConfig, heuristic: MmfSolution) -> MmfSolution:
    """Best of ``heuristic`` and an SCA solve of every other decoding order."""
    best = heuristic
    for order in all_orders(instance):
        if order == instance.order:
            continue
        sol = sca_solve(instance.with_order(order), config)
        if sol.t_star > best.t_star:
            best = sol
    return best


def _solve_unit(args) -> list[ResultRow]:
    config, channel, snr_db, blocklength, realization = args
    fbl = FblParams(blocklength, config.epsilon)
    budget = budget_from_snr(snr_db, channel.noise_power)
    solver = config.solver_config()
    K = channel.num_users
    done: dict[SchemeKind, ResultRow] = {}
    warm: list[MmfSolution] = []

    def record(kind: SchemeKind, solve):
        t0 = time.perf_counter()
        try:
            sol = solve()
            row = ResultRow(kind.tag, K, kind.split_count, snr_db, blocklength, config.epsilon,
                            realization, config.seed, float(np.min(sol.user_rates)),
                            bool(sol.converged), int(sol.iterations))
        except Exception as exc:  # a failed cell is recorded, never fatal
            sol = None
            row = ResultRow(kind.tag, K, kind.split_count, snr_db, blocklength, config.epsilon,
                            realization, config.seed, math.nan, False, 0, error=repr(exc))
        if config.timing:
            row.wall_ms = (time.perf_counter() - t0) * 1e3
        done[kind] = row
        return sol

    kinds = config.scheme_kinds()
    noma = None
    if any(k.tag in (NOMA, RSMA) for k in kinds):
        def solve_noma():
            sol = noma_solve(channel, fbl, budget, solver)
            if config.order_policy == EXHAUSTIVE:
                sol = best_order_solution(SchemeKind(NOMA).instance(channel, fbl, budget), solver, sol)
            return sol
        noma = record(SchemeKind(NOMA), solve_noma)
    if noma is not None:
        warm.append(noma)
    for kind in kinds:
        if kind.tag == RSMA:
            def solve(kind=kind):
                sol = rsma_solve(channel, kind.split_count, fbl, budget, solver, warm_starts=list(warm))
                if config.order_policy == EXHAUSTIVE:
                    sol = best_order_solution(kind.instance(channel, fbl, budget), solver, sol)
                return sol
            sol = record(kind, solve)
            if sol is not None and config.order_policy == HEURISTIC:
                warm.append(sol)
        elif kind.tag == TIN:
            record(kind, lambda: tin_solve(channel, fbl, budget, solver, full_power=config.tin_full_power))
    return [done[k] for k in kinds]


def run_sweep(config: SweepConfig, jobs: int = 1, progress=None) -> SweepResult:
    """Solve every (scheme, SNR, blocklength, realization) cell of ``config``.

    Rows come out ordered by SNR, blocklength, realization and scheme no
    matter how many worker processes are used.
    """
    channels = generate_rayleigh(config.num_users, config.realizations, config.seed)
    units = [(config, ch, float(snr), float(n), r)
             for snr in config.snr_db_list
             for n in config.blocklength_list
             for r, ch in enumerate(channels)]
    result = SweepResult(config)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, rows in enumerate(pool.map(_solve_unit, units, chunksize=4)):
                result.rows.extend(rows)
                if progress:
                    progress(i + 1, len(units))
    else:
        for i, unit in enumerate(units):
            result.rows.extend(_solve_unit(unit))
            if progress:
                progress(i + 1, len(units))
    return result


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x))


def format_row(row: ResultRow) -> list[str]:
    return [row.scheme, str(row.K), str(row.split_count), _fmt(row.snr_db), _fmt(row.blocklength),
            _fmt(row.epsilon), str(row.realization), str(row.seed), _fmt(row.min_rate),
            "true" if row.converged else "false", str(row.iterations), f"{row.wall_ms:.3f}"]


def csv_text(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(format_row(r) for r in rows)
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(rows))
    return path


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError("unexpected CSV header")
        return [ResultRow(d["scheme"], int(d["K"]), int(d["split_count"]), float(d["snr_db"]),
                          float(d["blocklength"]), float(d["epsilon"]), int(d["realization"]),
                          int(d["seed"]), float(d["min_rate"]), d["converged"] == "true",
                          int(d["iterations"]), float(d["wall_ms"]))
                for d in reader]


def scheme_label(scheme: str, split_count: int) -> str:
    return f"rsma_J{split_count}" if scheme == RSMA else scheme


def gnuplot_tables(result: SweepResult) -> dict[float, str]:
    """Whitespace tables of mean min rate versus SNR, one per blocklength."""
    means = result.cell_means()
    kinds = result.config.scheme_kinds()
    labels = [scheme_label(k.tag, k.split_count) for k in kinds]
    tables = {}
    for n in result.config.blocklength_list:
        lines = ["# snr_db " + " ".join(labels)]
        for snr in result.config.snr_db_list:
            vals = [means.get((k.tag, k.split_count, float(snr), float(n)), math.nan) for k in kinds]
            lines.append(" ".join([f"{snr:g}"] + [f"{v:.6f}" for v in vals]))
        tables[float(n)] = "\n".join(lines) + "\n"
    return tables


def write_outputs(result: SweepResult, out_dir) -> list[Path]:
    """Write ``results.csv`` and one ``table_N<blocklength>.dat`` per blocklength."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_csv(result.rows, out / "results.csv")]
    for n, text in gnuplot_tables(result).items():
        name = "inf" if math.isinf(n) else f"{n:g}"
        p = out / f"table_N{name}.dat"
        p.write_text(text)
        paths.append(p)
    return paths


_CONFIG_KEYS = {
    "snr_db": ("snr_db_list", float, True),
    "blocklength": ("blocklength_list", float, True),
    "epsilon": ("epsilon", float, False),
    "users": ("num_users", int, False),
    "split_counts": ("split_counts", int, True),
    "schemes": ("schemes", str, True),
    "realizations": ("realizations", int, False),
    "seed": ("seed", int, False),
    "order": ("order_policy", str, False),
    "tol": ("tol", float, False),
    "starts": ("num_starts", int, False),
    "timing": ("timing", "bool", False),
    "tin_full_power": ("tin_full_power", "bool", False),
}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, **overrides) -> SweepConfig:
    """Parse flat ``key = value`` lines; list values are comma separated.

    Blank lines and ``#`` comments are ignored. Unknown or repeated keys
    raise :class:`ConfigError`. Keyword ``overrides`` use field names.

    >>> parse_config("snr_db = 0, 10\\nusers = 3").snr_db_list
    (0.0, 10.0)
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name, kind, is_list = _CONFIG_KEYS[key]
        if name in values:
            raise ConfigError(f"line {lineno}: key {key!r} given twice")
        conv = _parse_bool if kind == "bool" else kind
        try:
            items = [conv(v.strip()) for v in value.split(",") if v.strip()] if is_list else conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        values[name] = tuple(items) if is_list else items
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(SweepConfig)}
    bad = set(values) - known
    if bad:
        raise ConfigError(f"unknown settings {sorted(bad)}")
    return SweepConfig(**values)


def load_config(path, **overrides) -> SweepConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, **overrides)

