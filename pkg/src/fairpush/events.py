"""Event records emitted by a simulation run.

The log is the single source of truth for metrics: every observable fact about
a run (requests, rewrites, deliveries, discards, playback transitions, slice
changes) appears here as a timestamped row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

# Observable event kinds, in no particular order.
REQUEST_SENT = "request_sent"
REQUEST_REWRITTEN = "request_rewritten"
RESPONSE_STARTED = "response_started"
RESPONSE_DONE = "response_done"
PUSH_PROMISE_RECEIVED = "push_promise_received"
PUSH_PAYLOAD_DONE = "push_payload_done"
PUSH_DISCARDED = "push_discarded"
PLAYBACK_START = "playback_start"
PLAYBACK_STALL = "playback_stall"
PLAYBACK_RESUME = "playback_resume"
SEGMENT_PLAYED = "segment_played"
CLIENT_JOIN = "client_join"
CLIENT_LEAVE = "client_leave"
SLICE_UPDATE = "slice_update"

ALL_KINDS = frozenset({
    REQUEST_SENT,
    REQUEST_REWRITTEN,
    RESPONSE_STARTED,
    RESPONSE_DONE,
    PUSH_PROMISE_RECEIVED,
    PUSH_PAYLOAD_DONE,
    PUSH_DISCARDED,
    PLAYBACK_START,
    PLAYBACK_STALL,
    PLAYBACK_RESUME,
    SEGMENT_PLAYED,
    CLIENT_JOIN,
    CLIENT_LEAVE,
    SLICE_UPDATE,
})

CSV_COLUMNS = ("time_s", "client_id", "kind", "segment_index", "bitrate_kbps", "buffer_s", "extra")


@dataclass(frozen=True)
class SimEvent:
    """One log row.

    segment_index, bitrate_kbps and buffer_s are filled where they apply and
    left None elsewhere.  extra carries kind-specific detail as a short string.
    """

    time_s: float
    seq: int
    client_id: str
    kind: str
    segment_index: int | None = None
    bitrate_kbps: int | None = None
    buffer_s: float | None = None
    extra: str = ""


@dataclass
class EventLog:
    """Append-only event sequence ordered by (time, seq)."""

    events: list[SimEvent] = field(default_factory=list)
    _seq: int = 0

    def append(
        self,
        time_s: float,
        client_id: str,
        kind: str,
        segment_index: int | None = None,
        bitrate_kbps: int | None = None,
        buffer_s: float | None = None,
        extra: str = "",
    ) -> SimEvent:
        if self.events and time_s < self.events[-1].time_s:
            raise AssertionError(
                f"log time went backwards: {time_s} after {self.events[-1].time_s}"
            )
        event = SimEvent(time_s, self._seq, client_id, kind, segment_index, bitrate_kbps, buffer_s, extra)
        self._seq += 1
        self.events.append(event)
        return event

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def for_client(self, client_id: str) -> list[SimEvent]:
        return [e for e in self.events if e.client_id == client_id]

    def of_kind(self, kind: str, client_id: str | None = None) -> list[SimEvent]:
        return [
            e
            for e in self.events
            if e.kind == kind and (client_id is None or e.client_id == client_id)
        ]

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for e in self.events:
            writer.writerow([
                repr(e.time_s),
                e.client_id,
                e.kind,
                "" if e.segment_index is None else e.segment_index,
                "" if e.bitrate_kbps is None else e.bitrate_kbps,
                "" if e.buffer_s is None else repr(e.buffer_s),
                e.extra,
            ])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EventLog":
        log = cls()
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected event log header {header}")
        for row in reader:
            time_s, client_id, kind, index, bitrate, buffer_s, extra = row
            log.append(
                float(time_s),
                client_id,
                kind,
                int(index) if index else None,
                int(bitrate) if bitrate else None,
                float(buffer_s) if buffer_s else None,
                extra,
            )
        return log
