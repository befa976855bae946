"""NOMA and TIN max-min baselines built on the RSMA machinery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import SPLIT1, WHOLE, ChannelState, StreamId, FblParams, PowerAllocation, UserPartition, noma_order
from .sca import MmfInstance, MmfSolution, SolverConfig, certify_solution, sca_solve

RSMA = "rsma"
NOMA = "noma"
TIN = "tin"


@dataclass(frozen=True)
class SchemeKind:
    tag: str
    split_count: int = 0

    def __post_init__(self):
        if self.tag not in (RSMA, NOMA, TIN):
            raise ValueError(f"unknown scheme {self.tag!r}")
        if self.tag != RSMA and self.split_count:
            raise ValueError(f"{self.tag} does not split messages")

    def instance(self, channel: ChannelState, fbl: FblParams, budget: float) -> MmfInstance:
        if self.tag == RSMA:
            return MmfInstance.heuristic(channel, self.split_count, fbl, budget)
        return MmfInstance.heuristic(channel, 0, fbl, budget, mode="tin" if self.tag == TIN else "sic")


def noma_instance(channel: ChannelState, fbl: FblParams, budget: float) -> MmfInstance:
    partition = UserPartition.noma(channel.num_users)
    return MmfInstance(channel, partition, noma_order(channel), fbl, budget)


def noma_solve(channel: ChannelState, fbl: FblParams, budget: float,
               config: SolverConfig = SolverConfig()) -> MmfSolution:
    """SIC without splitting, users decoded by descending channel gain."""
    return sca_solve(noma_instance(channel, fbl, budget), config)


def tin_solve(channel: ChannelState, fbl: FblParams, budget: float,
              config: SolverConfig = SolverConfig(), full_power: bool = False) -> MmfSolution:
    """Every user decoded against the interference of all others.

    Powers are optimized with the same SCA pipeline unless ``full_power``
    is set, in which case every user transmits at the budget.
    """
    inst = SchemeKind(TIN).instance(channel, fbl, budget)
    if not full_power:
        return sca_solve(inst, config)
    p = np.full(inst.num_streams, float(budget))
    worst = inst.true_rates(p, clamp=False)[2]
    sol = MmfSolution(worst, PowerAllocation(p, budget), inst.true_rates(p)[1], 0, True,
                      history=[worst], order=inst.order)
    sol.certificate = certify_solution(sol, inst).max_violation
    return sol


def embed_solution(source: MmfSolution, instance: MmfInstance) -> np.ndarray:
    """Stream powers reproducing ``source`` inside ``instance``.

    ``source`` may split fewer users than ``instance`` (NOMA splits none). A
    user that splits only in ``instance`` puts its whole-message power on its
    first part and leaves the second silent; when splitting users are the
    strongest, decoding order and SINRs then match ``source`` exactly.
    """
    powers = dict(zip(source.order.streams, source.powers.powers))
    out = np.zeros(instance.num_streams)
    for g, s in enumerate(instance.order):
        if s in powers:
            out[g] = powers[s]
        elif s.part == SPLIT1:
            out[g] = powers.get(StreamId(s.user, WHOLE), 0.0)
    return out


def rsma_solve(channel: ChannelState, split_count: int, fbl: FblParams, budget: float,
               config: SolverConfig = SolverConfig(),
               warm_starts: Sequence[MmfSolution] | None = None) -> MmfSolution:
    """RSMA with the strongest ``split_count`` users splitting.

    Besides the configured start, SCA also starts from each solution in
    ``warm_starts`` embedded into this instance (by default the NOMA
    solution). Since SCA never decreases the min rate, the result is never worse
    than a warm start by more than the rate of its silent streams.
    """
    inst = SchemeKind(RSMA, split_count).instance(channel, fbl, budget)
    if split_count == 0:
        return sca_solve(inst, config)
    if warm_starts is None:
        warm_starts = [noma_solve(channel, fbl, budget, config)]
    extra = [embed_solution(source, inst) for source in warm_starts]
    return sca_solve(inst, config, initial_powers=extra or None)


def solve_scheme(scheme: SchemeKind, channel: ChannelState, fbl: FblParams, budget: float,
                 config: SolverConfig = SolverConfig(),
                 warm_starts: Sequence[MmfSolution] | None = None) -> MmfSolution:
    if scheme.tag == NOMA:
        return noma_solve(channel, fbl, budget, config)
    if scheme.tag == TIN:
        return tin_solve(channel, fbl, budget, config)
    return rsma_solve(channel, scheme.split_count, fbl, budget, config, warm_starts)
