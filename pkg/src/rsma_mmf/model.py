"""Uplink RSMA system model at the SINR/rate level.

Users are indexed from 0. A splitting user contributes two streams
(``split1`` and ``split2``), a non-splitting user a single ``whole`` stream.
All per-stream arrays are aligned with a :class:`DecodingOrder`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import erfcinv

LOG2E = 1.0 / math.log(2.0)

WHOLE = "whole"
SPLIT1 = "split1"
SPLIT2 = "split2"
_PARTS = (WHOLE, SPLIT1, SPLIT2)


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChannelState:
    """Per-user channel power gains ``|h_k|^2`` and receiver noise power."""

    gains: np.ndarray
    noise_power: float = 1.0

    def __post_init__(self):
        gains = _frozen_array(self.gains).reshape(-1)
        if gains.size == 0:
            raise ValueError("channel needs at least one user")
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise ValueError("channel gains must be finite and non-negative")
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "noise_power", float(self.noise_power))

    @property
    def num_users(self) -> int:
        return int(self.gains.size)

    def scaled(self, factor: float) -> "ChannelState":
        return ChannelState(self.gains * factor, self.noise_power)


def _by_descending_gain(users: Sequence[int], gains: np.ndarray) -> tuple[int, ...]:
    # ties broken by ascending user index
    return tuple(sorted(users, key=lambda k: (-gains[k], k)))


@dataclass(frozen=True)
class UserPartition:
    """Split of the user set into splitting (J) and non-splitting (U) users."""

    num_users: int
    splitting: tuple[int, ...] = ()
    non_splitting: tuple[int, ...] = field(default=None)

    def __post_init__(self):
        if self.num_users < 1:
            raise ValueError("need at least one user")
        splitting = tuple(int(k) for k in self.splitting)
        if self.non_splitting is None:
            non_splitting = tuple(k for k in range(self.num_users) if k not in splitting)
        else:
            non_splitting = tuple(int(k) for k in self.non_splitting)
        if len(set(splitting)) != len(splitting) or len(set(non_splitting)) != len(non_splitting):
            raise ValueError("duplicate user in partition")
        if set(splitting) & set(non_splitting):
            raise ValueError("splitting and non-splitting sets overlap")
        if set(splitting) | set(non_splitting) != set(range(self.num_users)):
            raise ValueError("partition does not cover all users")
        object.__setattr__(self, "splitting", splitting)
        object.__setattr__(self, "non_splitting", non_splitting)

    @classmethod
    def strongest(cls, channel: ChannelState, split_count: int) -> "UserPartition":
        """Split the ``split_count`` users with the largest gains."""
        k = channel.num_users
        if not 0 <= split_count <= k:
            raise ValueError(f"split_count must lie in [0, {k}], got {split_count}")
        ranked = _by_descending_gain(range(k), channel.gains)
        return cls(k, tuple(sorted(ranked[:split_count])))

    @classmethod
    def noma(cls, num_users: int) -> "UserPartition":
        return cls(num_users, ())

    @property
    def num_streams(self) -> int:
        return 2 * len(self.splitting) + len(self.non_splitting)


class StreamId(NamedTuple):
    user: int
    part: str = WHOLE

    def __repr__(self):
        return f"s{self.user}" if self.part == WHOLE else f"s{self.user},{self.part[-1]}"


@dataclass(frozen=True)
class DecodingOrder:
    """SIC decoding order over all streams of a partition."""

    streams: tuple[StreamId, ...]

    def __post_init__(self):
        streams = tuple(StreamId(int(s[0]), s[1]) for s in self.streams)
        if len(set(streams)) != len(streams):
            raise ValueError("decoding order repeats a stream")
        for s in streams:
            if s.part not in _PARTS:
                raise ValueError(f"unknown stream part {s.part!r}")
        object.__setattr__(self, "streams", streams)

    def __len__(self):
        return len(self.streams)

    def __iter__(self):
        return iter(self.streams)

    @property
    def users(self) -> np.ndarray:
        return np.array([s.user for s in self.streams], dtype=int)

    def index(self, stream: StreamId) -> int:
        return self.streams.index(stream)

    def streams_of(self, user: int) -> list[int]:
        return [g for g, s in enumerate(self.streams) if s.user == user]

    def validate(self, partition: UserPartition) -> None:
        expected = {StreamId(k, WHOLE) for k in partition.non_splitting}
        for j in partition.splitting:
            expected |= {StreamId(j, SPLIT1), StreamId(j, SPLIT2)}
        if set(self.streams) != expected:
            raise ValueError("decoding order is not a permutation of the partition's streams")


@dataclass(frozen=True)
class FblParams:
    """Blocklength ``N`` (``math.inf`` for the asymptotic regime) and error probability."""

    blocklength: float = math.inf
    epsilon: float = 1e-5

    def __post_init__(self):
        n = float(self.blocklength)
        if not (n >= 1 or n == math.inf):
            raise ValueError("blocklength must be >= 1 or inf")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        object.__setattr__(self, "blocklength", n)

    @property
    def infinite(self) -> bool:
        return math.isinf(self.blocklength)

    @property
    def penalty_b(self) -> float:
        return inverse_q(self.epsilon) * LOG2E

    @property
    def penalty(self) -> float:
        """Coefficient ``B / sqrt(N)`` multiplying ``sqrt(V)``; 0 when N is infinite."""
        if self.infinite:
            return 0.0
        return self.penalty_b / math.sqrt(self.blocklength)


@dataclass(frozen=True)
class PowerAllocation:
    powers: np.ndarray
    budget: float

    def __post_init__(self):
        powers = _frozen_array(self.powers).reshape(-1)
        if np.any(powers < 0):
            raise ValueError("stream powers must be non-negative")
        if not self.budget > 0:
            raise ValueError("power budget must be positive")
        object.__setattr__(self, "powers", powers)
        object.__setattr__(self, "budget", float(self.budget))

    def user_totals(self, order: DecodingOrder, num_users: int) -> np.ndarray:
        return np.bincount(order.users, weights=self.powers, minlength=num_users)

    def budget_violation(self, order: DecodingOrder, num_users: int) -> float:
        """Largest amount by which any user's total power exceeds the budget."""
        return float(max(0.0, np.max(self.user_totals(order, num_users)) - self.budget))


@dataclass(frozen=True)
class StreamMetrics:
    sinr: np.ndarray
    dispersion: np.ndarray
    rate: np.ndarray


def q_function(x):
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def inverse_q(epsilon: float) -> float:
    """Inverse of the standard normal tail probability ``Q``."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return float(math.sqrt(2.0) * erfcinv(2.0 * epsilon))


def dispersion(sinr):
    """Channel dispersion ``V = 1 - (1 + sinr)^-2``."""
    sinr = np.asarray(sinr, dtype=float)
    return 1.0 - 1.0 / (1.0 + sinr) ** 2


def fbl_rate(sinr, params: FblParams, clamp: bool = True):
    """Normal-approximation achievable rate in bits per channel use.

    ``log2(1 + sinr) - B/sqrt(N) * sqrt(V)``. With ``clamp`` the result is
    floored at zero; the optimizer works on the unclamped value.
    """
    sinr = np.asarray(sinr, dtype=float)
    if np.any(sinr < 0):
        raise ValueError("sinr must be non-negative")
    rate = np.log2(1.0 + sinr)
    if not params.infinite:
        rate = rate - params.penalty * np.sqrt(dispersion(sinr))
    if clamp:
        rate = np.maximum(rate, 0.0)
    return rate if rate.ndim else float(rate)


def compute_sinr(order: DecodingOrder, alloc: PowerAllocation | np.ndarray,
                 channel: ChannelState, mode: str = "sic") -> np.ndarray:
    """Per-stream SINR for the given decoding order.

    ``sic``: stream ``g`` sees interference from the streams decoded after it.
    ``tin``: every stream sees interference from all other streams; only
    valid when no user splits.
    """
    powers = alloc.powers if isinstance(alloc, PowerAllocation) else np.asarray(alloc, dtype=float)
    if powers.shape != (len(order),):
        raise ValueError(f"expected {len(order)} stream powers, got shape {powers.shape}")
    users = order.users
    if users.max() >= channel.num_users:
        raise ValueError("decoding order references a user outside the channel")
    received = powers * channel.gains[users]
    if mode == "sic":
        # suffix sums: interference from streams decoded later
        tail = np.cumsum(received[::-1])[::-1]
        interference = tail - received
    elif mode == "tin":
        if any(s.part != WHOLE for s in order):
            raise ValueError("tin mode requires non-splitting users only")
        interference = received.sum() - received
    else:
        raise ValueError(f"unknown sinr mode {mode!r}")
    return received / (np.maximum(interference, 0.0) + channel.noise_power)


def stream_metrics(order: DecodingOrder, alloc, channel: ChannelState,
                   params: FblParams, mode: str = "sic", clamp: bool = True) -> StreamMetrics:
    sinr = compute_sinr(order, alloc, channel, mode)
    return StreamMetrics(sinr, dispersion(sinr), np.asarray(fbl_rate(sinr, params, clamp)))


def build_decoding_order(partition: UserPartition, channel: ChannelState) -> DecodingOrder:
    """Heuristic SIC order: first parts of splitting users, then non-splitting
    users, then second parts; each block by descending channel gain."""
    if channel.num_users != partition.num_users:
        raise ValueError("partition and channel disagree on the number of users")
    split = _by_descending_gain(partition.splitting, channel.gains)
    whole = _by_descending_gain(partition.non_splitting, channel.gains)
    streams = ([StreamId(j, SPLIT1) for j in split]
               + [StreamId(u, WHOLE) for u in whole]
               + [StreamId(j, SPLIT2) for j in split])
    return DecodingOrder(tuple(streams))


def noma_order(channel: ChannelState) -> DecodingOrder:
    return build_decoding_order(UserPartition.noma(channel.num_users), channel)


def user_min_rate(stream_rates, order: DecodingOrder,
                  partition: UserPartition) -> tuple[np.ndarray, float]:
    """Aggregate stream rates into per-user rates; returns ``(R, min R)``."""
    rates = np.asarray(stream_rates, dtype=float)
    if rates.shape != (len(order),):
        raise ValueError("stream rates are not aligned with the decoding order")
    users = order.users
    counts = np.bincount(users, minlength=partition.num_users)
    expected = np.ones(partition.num_users, dtype=int)
    expected[list(partition.splitting)] = 2
    if counts.size != partition.num_users or np.any(counts != expected):
        raise ValueError("decoding order does not carry every user's streams")
    per_user = np.bincount(users, weights=rates, minlength=partition.num_users)
    return per_user, float(per_user.min())
