"""Client agent: playout buffer, push cache and the adaptation loop.

The agent is a passive state machine.  The session layer asks it what to do
next (plan_fetch), executes the returned action against the network model,
and feeds results back in (on_lead_response, on_push_complete, consume).  All
randomness comes from the injected per-client RNG, which is only used for the
re-poll delay drawn while waiting for buffer room; that jitter is what breaks
synchronization between otherwise identical clients.

Throughput is sampled per payload: size over transfer wall time, for every
response and push that reaches the client.  Wasted pushes count; they
occupied the link all the same.

Bitrate selection follows the usual conservative recipe: harmonic mean of
the last few payload samples, pick the highest ladder rate under the scaled
estimate, and move at most one ladder level per decision.  Moving up also
requires having spent a minimum number of decisions at the current level.
A bitrate imposed by a proxy notice bypasses all of that for the remainder
of the cycle it arrived in, and may jump any number of levels.

A pushed segment at an unexpected bitrate is noticed only once its payload
has fully arrived; the client cannot refuse bytes already committed to the
wire.  It then discards the segment and requests it again, which is what
makes wasted pushes expensive: the replacement response queues behind
whatever the broken cycle is still delivering.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from random import Random

from fairpush.engine import TIME_EPS
from fairpush.errors import ConfigError, ProtocolError, SimulationError
from fairpush.media import BitrateLadder, SegmentRef, fair_bitrate

BUFFER_LEVEL_HEADER = "x-buffer-level"
OVERWRITE_NOTICE_HEADER = "x-fauras-bitrate"

ADAPTIVE = "adaptive"
FIXED_LOWEST = "fixed_lowest"

# plan_fetch action kinds
ACT_REQUEST = "request"
ACT_CONSUME = "consume"
ACT_AWAIT_CACHE = "await_cache"
ACT_DISCARD = "discard"
ACT_WAIT = "wait"
ACT_FINISHED = "finished"

# fetch states
IDLE = "idle"
AWAITING_RESPONSE = "awaiting_response"
AWAITING_CACHE = "awaiting_cache"
WAITING_ROOM = "waiting_room"
DONE_DOWNLOADING = "done_downloading"


def harmonic_mean(samples_kbps: list[float]) -> float | None:
    """Harmonic mean of throughput samples; None signals "no estimate yet"."""
    if not samples_kbps:
        return None
    if any(s <= 0 for s in samples_kbps):
        raise SimulationError(f"throughput samples must be positive, got {samples_kbps}")
    return len(samples_kbps) / sum(1.0 / s for s in samples_kbps)


def format_buffer_level(level_s: float) -> str:
    return f"{level_s:.3f}"


def parse_buffer_level(value: str) -> float:
    try:
        level = float(value)
    except ValueError:
        raise ProtocolError(f"malformed buffer level header {value!r}") from None
    if level < 0:
        raise ProtocolError(f"negative buffer level {value!r}")
    return level


@dataclass
class PlayoutBuffer:
    """FIFO of downloaded segments draining at one content-second per second."""

    max_s: float
    segment_duration_s: float
    queued: deque = field(default_factory=deque)
    head_remaining_s: float = 0.0
    playing: bool = False
    started: bool = False
    played_count: int = 0

    @property
    def level_s(self) -> float:
        if not self.queued:
            return 0.0
        return self.head_remaining_s + self.segment_duration_s * (len(self.queued) - 1)

    def has_room(self) -> bool:
        return self.level_s + self.segment_duration_s <= self.max_s + TIME_EPS

    def enqueue(self, ref: SegmentRef) -> None:
        if not self.has_room():
            raise SimulationError(
                f"enqueue would overflow buffer: {self.level_s} + segment > {self.max_s}"
            )
        self.queued.append(ref)
        if len(self.queued) == 1:
            self.head_remaining_s = self.segment_duration_s

    def drain(self, dt: float) -> None:
        """Advance playback by dt.  Callers never let dt cross a segment edge."""
        if dt < 0:
            raise SimulationError(f"negative drain {dt}")
        if not self.playing or not self.queued or dt == 0:
            return
        self.head_remaining_s -= dt
        if self.head_remaining_s < -TIME_EPS:
            raise SimulationError("playback drained past a segment boundary")
        self.head_remaining_s = max(self.head_remaining_s, 0.0)

    def next_boundary_s(self) -> float | None:
        """Time until the current head segment finishes playing, if playing."""
        if self.playing and self.queued:
            return self.head_remaining_s
        return None

    def pop_played(self) -> SegmentRef:
        if not self.queued or self.head_remaining_s > TIME_EPS:
            raise SimulationError("pop_played called away from a segment boundary")
        ref = self.queued.popleft()
        self.played_count += 1
        if self.queued:
            self.head_remaining_s = self.segment_duration_s
        else:
            self.head_remaining_s = 0.0
        return ref


@dataclass
class CacheEntry:
    bitrate_kbps: int
    complete: bool = False


class PushCache:
    """Pushed segments waiting to be moved into the playout buffer.

    Holds at most one entry per segment index.  Entries start incomplete when
    the promise is announced and flip to complete when the payload lands.
    """

    def __init__(self) -> None:
        self._entries: dict[int, CacheEntry] = {}

    def announce(self, index: int, bitrate_kbps: int) -> None:
        if index in self._entries:
            raise SimulationError(f"cache already holds an entry for segment {index}")
        self._entries[index] = CacheEntry(bitrate_kbps)

    def mark_complete(self, index: int) -> None:
        entry = self._entries.get(index)
        if entry is None:
            raise SimulationError(f"no cache entry for segment {index}")
        entry.complete = True

    def get(self, index: int) -> CacheEntry | None:
        return self._entries.get(index)

    def remove(self, index: int) -> CacheEntry:
        if index not in self._entries:
            raise SimulationError(f"no cache entry for segment {index}")
        return self._entries.pop(index)

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class AbrState:
    """Adaptation state: sample window, current ladder level, switch damping."""

    window: int = 5
    safety: float = 1.0
    up_hold: int = 2
    samples_kbps: deque = field(default_factory=deque)
    level: int = 0
    decisions_at_level: int = 0
    forced_kbps: int | None = None
    forced_until_index: int = 0

    def add_sample(self, kbps: float) -> None:
        if kbps <= 0:
            raise SimulationError(f"throughput sample must be positive, got {kbps}")
        self.samples_kbps.append(kbps)
        while len(self.samples_kbps) > self.window:
            self.samples_kbps.popleft()

    def estimate_kbps(self) -> float | None:
        return harmonic_mean(list(self.samples_kbps))

    def select_bitrate(self, ladder: BitrateLadder) -> int:
        """One adaptation decision; mutates level bookkeeping."""
        if self.forced_kbps is not None:
            return self.forced_kbps
        estimate = self.estimate_kbps()
        if estimate is None:
            target_level = 0
        else:
            target_level = ladder.level_of(fair_bitrate(ladder, self.safety * estimate))
        if target_level > self.level and self.decisions_at_level >= self.up_hold:
            self.level += 1
            self.decisions_at_level = 1
        elif target_level < self.level:
            self.level -= 1
            self.decisions_at_level = 1
        else:
            self.decisions_at_level += 1
        return ladder.rates_kbps[self.level]

    def force(self, bitrate_kbps: int, ladder: BitrateLadder, until_index: int) -> None:
        """Adopt a notice-imposed bitrate for the rest of the current cycle."""
        self.level = ladder.level_of(bitrate_kbps)
        self.decisions_at_level = 1
        self.forced_kbps = bitrate_kbps
        self.forced_until_index = until_index

    def clear_forced_if_passed(self, next_index: int) -> None:
        if self.forced_kbps is not None and next_index > self.forced_until_index:
            self.forced_kbps = None
            self.forced_until_index = 0


@dataclass(frozen=True)
class FetchAction:
    kind: str
    index: int = 0
    bitrate_kbps: int = 0
    wake_at_s: float = 0.0


class ClientAgent:
    """One streaming client."""

    def __init__(
        self,
        client_id: str,
        ladder: BitrateLadder,
        push_k: int,
        rng: Random,
        buffer_max_s: float = 10.0,
        startup_s: float | None = None,
        resume_s: float | None = None,
        abr_mode: str = ADAPTIVE,
        abr: AbrState | None = None,
    ) -> None:
        if abr_mode not in (ADAPTIVE, FIXED_LOWEST):
            raise SimulationError(f"unknown abr mode {abr_mode!r}")
        self.client_id = client_id
        self.ladder = ladder
        self.push_k = push_k
        self.rng = rng
        self.abr_mode = abr_mode
        self.abr = abr if abr is not None else AbrState()
        seg = ladder.segment_duration_s
        self.buffer = PlayoutBuffer(max_s=buffer_max_s, segment_duration_s=seg)
        self.startup_s = 2 * seg if startup_s is None else startup_s
        self.resume_s = 2 * seg if resume_s is None else resume_s
        self.cache = PushCache()
        self.next_index = 1
        self.expected_kbps: int | None = None
        self.state = IDLE
        self.awaited_index = 0
        self.delivered_watermark = 0

    # ---- fetch planning ----

    def plan_fetch(self, now_s: float) -> FetchAction:
        """Next fetch action.  Only valid while the agent is idle."""
        if self.state != IDLE:
            raise SimulationError(f"plan_fetch while {self.state}")
        if self.next_index > self.ladder.total_segments:
            self.state = DONE_DOWNLOADING
            return FetchAction(ACT_FINISHED)
        self.abr.clear_forced_if_passed(self.next_index)
        entry = self.cache.get(self.next_index)
        if entry is not None:
            if not entry.complete:
                self.state = AWAITING_CACHE
                self.awaited_index = self.next_index
                return FetchAction(ACT_AWAIT_CACHE, index=self.next_index)
            if entry.bitrate_kbps != self.expected_kbps:
                return FetchAction(
                    ACT_DISCARD, index=self.next_index, bitrate_kbps=entry.bitrate_kbps
                )
            if not self.buffer.has_room():
                return self._wait_action(now_s)
            return FetchAction(ACT_CONSUME, index=self.next_index)
        if not self.buffer.has_room():
            return self._wait_action(now_s)
        decision = self._decide_bitrate()
        self.expected_kbps = decision
        self.state = AWAITING_RESPONSE
        return FetchAction(ACT_REQUEST, index=self.next_index, bitrate_kbps=decision)

    def _decide_bitrate(self) -> int:
        if self.abr_mode == FIXED_LOWEST:
            return self.ladder.lowest_kbps
        return self.abr.select_bitrate(self.ladder)

    def _wait_action(self, now_s: float) -> FetchAction:
        if not self.buffer.playing:
            raise SimulationError("waiting for buffer room while playback is paused")
        seg = self.ladder.segment_duration_s
        needed = self.buffer.level_s + seg - self.buffer.max_s
        # Full-buffer polling is lazy: recheck between half a segment and a
        # whole segment after room opens up.
        jitter = self.rng.uniform(seg / 2, seg)
        self.state = WAITING_ROOM
        return FetchAction(ACT_WAIT, wake_at_s=now_s + max(needed, 0.0) + jitter)

    def wake(self) -> None:
        if self.state != WAITING_ROOM:
            raise SimulationError(f"wake while {self.state}")
        self.state = IDLE

    # ---- throughput observation ----

    def observe_transfer(self, size_kbit: float, wall_s: float) -> None:
        """Record one per-payload throughput sample."""
        if wall_s <= 0:
            raise SimulationError(f"non-positive transfer time {wall_s}")
        self.abr.add_sample(size_kbit / wall_s)

    # ---- delivery callbacks ----

    def on_lead_response(self, ref: SegmentRef, headers: dict[str, str]) -> list[str]:
        """Lead payload arrived: enqueue it and honor an overwrite notice.

        Returns playback transition event kinds triggered by the enqueue.
        """
        if self.state != AWAITING_RESPONSE:
            raise ProtocolError(f"unexpected response for segment {ref.index} while {self.state}")
        if ref.index != self.next_index:
            raise ProtocolError(
                f"response for segment {ref.index}, expected {self.next_index}"
            )
        self.state = IDLE
        notice = headers.get(OVERWRITE_NOTICE_HEADER)
        if notice is not None:
            try:
                notified_kbps = int(notice)
            except ValueError:
                raise ProtocolError(f"malformed overwrite notice {notice!r}") from None
            try:
                self.ladder.level_of(notified_kbps)
            except ConfigError:
                raise ProtocolError(f"overwrite notice rate {notified_kbps} not on ladder") from None
            self.abr.force(notified_kbps, self.ladder, until_index=ref.index + self.push_k - 1)
            self.expected_kbps = notified_kbps
        return self._enqueue(ref)

    def on_push_complete(self, index: int) -> None:
        self.cache.mark_complete(index)

    def cache_ready(self, index: int) -> bool:
        """True if the agent was blocked on exactly this push finishing."""
        if self.state == AWAITING_CACHE and self.awaited_index == index:
            self.state = IDLE
            self.awaited_index = 0
            return True
        return False

    def consume(self, index: int) -> list[str]:
        """Move a complete cached segment into the playout buffer."""
        entry = self.cache.remove(index)
        if not entry.complete:
            raise SimulationError(f"consuming incomplete cache entry for segment {index}")
        return self._enqueue(SegmentRef(index, entry.bitrate_kbps))

    def _enqueue(self, ref: SegmentRef) -> list[str]:
        self.buffer.enqueue(ref)
        self.next_index = ref.index + 1
        self.delivered_watermark = max(self.delivered_watermark, ref.index)
        transitions: list[str] = []
        level = self.buffer.level_s
        if not self.buffer.started:
            if level >= self.startup_s - TIME_EPS:
                self.buffer.started = True
                self.buffer.playing = True
                transitions.append("playback_start")
        elif not self.buffer.playing:
            if level >= self.resume_s - TIME_EPS:
                self.buffer.playing = True
                transitions.append("playback_resume")
        return transitions

    # ---- playback ----

    def playback_tick(self, dt: float) -> None:
        self.buffer.drain(dt)

    def on_play_boundary(self) -> tuple[SegmentRef, str | None]:
        """Pop the finished segment; classify what the empty-buffer case means.

        Returns (played ref, transition) where transition is "stall",
        "complete" or None.
        """
        ref = self.buffer.pop_played()
        if self.buffer.queued:
            return ref, None
        self.buffer.playing = False
        if self.buffer.played_count >= self.ladder.total_segments:
            return ref, "complete"
        return ref, "stall"

    @property
    def downloads_done(self) -> bool:
        return self.state == DONE_DOWNLOADING

    @property
    def playback_done(self) -> bool:
        return self.buffer.played_count >= self.ladder.total_segments
