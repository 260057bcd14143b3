"""Simulation core: clock, event queue, link model and flow progression.

Time is continuous.  Discrete events live in a heap keyed by (time, sequence)
so that simultaneous events fire in scheduling order.  Between events, active
transfers progress at piecewise-constant rates; completion instants are found
analytically, never by fixed-step integration.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any

from fairpush.errors import ConfigError, SimulationError

# Slack for float comparisons on times and kbit remainders.
TIME_EPS = 1e-9
KBIT_EPS = 1e-6

SHARED = "shared"
SLICED = "sliced"


def client_rng(run_seed: int, client_id: str) -> random.Random:
    """Independent deterministic stream for one client of one run.

    Seeding with a string goes through a stable hash inside random.Random, so
    the stream does not depend on the process or platform.
    """
    return random.Random(f"{run_seed}/{client_id}")


@dataclass
class Flow:
    """One in-progress payload transfer attributed to a client."""

    client_id: str
    size_kbit: float
    remaining_kbit: float = field(default=-1.0)
    payload: Any = None

    def __post_init__(self) -> None:
        if self.size_kbit <= 0:
            raise SimulationError(f"flow size must be positive, got {self.size_kbit}")
        if self.remaining_kbit < 0:
            self.remaining_kbit = self.size_kbit

    @property
    def done(self) -> bool:
        return self.remaining_kbit <= KBIT_EPS


@dataclass
class LinkModel:
    """Bottleneck link shared by all clients.

    In shared mode every active flow gets an equal split of the capacity.  In
    sliced mode each client owns a fixed slice; a client's concurrent flows
    split that slice equally and idle slices are not redistributed.
    """

    capacity_kbps: float
    mode: str = SHARED
    slices_kbps: dict[str, float] = field(default_factory=dict)
    base_rtt_s: float = 0.05

    def __post_init__(self) -> None:
        if self.capacity_kbps <= 0:
            raise ConfigError("link capacity must be positive")
        if self.mode not in (SHARED, SLICED):
            raise ConfigError(f"unknown link mode {self.mode!r}")
        if self.base_rtt_s < 0:
            raise ConfigError("base RTT cannot be negative")

    def set_slice(self, client_id: str, kbps: float) -> None:
        if kbps <= 0:
            raise ConfigError(f"slice for {client_id} must be positive, got {kbps}")
        self.slices_kbps[client_id] = kbps

    def clear_slice(self, client_id: str) -> None:
        self.slices_kbps.pop(client_id, None)

    def slice_of(self, client_id: str) -> float:
        if self.mode != SLICED:
            raise SimulationError("slice lookup on a shared link")
        try:
            return self.slices_kbps[client_id]
        except KeyError:
            raise SimulationError(f"no slice installed for client {client_id}") from None


@dataclass(order=True)
class _QueueEntry:
    time_s: float
    seq: int
    kind: str = field(compare=False)
    data: Any = field(compare=False)


class EventQueue:
    """Min-heap of pending events ordered by (time, sequence)."""

    def __init__(self) -> None:
        self._heap: list[_QueueEntry] = []
        self._seq = 0
        self.now_s = 0.0

    def schedule(self, time_s: float, kind: str, data: Any = None) -> None:
        if time_s < self.now_s - TIME_EPS:
            raise AssertionError(f"scheduling into the past: {time_s} < {self.now_s}")
        heapq.heappush(self._heap, _QueueEntry(max(time_s, self.now_s), self._seq, kind, data))
        self._seq += 1

    def next_event(self) -> _QueueEntry | None:
        if not self._heap:
            return None
        entry = heapq.heappop(self._heap)
        self.now_s = entry.time_s
        return entry

    def __bool__(self) -> bool:
        return bool(self._heap)

    def __len__(self) -> int:
        return len(self._heap)
