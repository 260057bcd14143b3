"""Bandwidth-allocating proxy sitting between clients and the origin.

Four strategies:

* noproxy: pass-through.  The link stays in shared mode and requests are
  forwarded untouched.  Baseline for everything else.
* reactive: bandwidth allocation only.  Every active client gets an equal
  slice of the link; requests are never modified.
* proactive: allocation plus immediate overwrite.  Any request above the
  fair bitrate is rewritten down to it, without telling the client.
* fauras: allocation plus buffer-aware overwrite.  A request is rewritten
  only when it exceeds the fair bitrate and the client's buffer, projected
  one push cycle ahead, would fall below one cycle of content.  The response
  then carries a notice header so the client adopts the rewritten bitrate
  instead of discarding the pushes that come with it.

The projected buffer is: current level, plus the cycle's worth of content
about to arrive, minus the time the cycle takes to download at the client's
allocated rate, capped at the buffer size.

A separate blanket-rewrite mode (rewrite every request to a fixed rate, no
notice) exists for push-accounting experiments; it is not a strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fairpush.client import BUFFER_LEVEL_HEADER, parse_buffer_level
from fairpush.errors import ConfigError, ProtocolError
from fairpush.media import BitrateLadder, SegmentRef, fair_bitrate


class Strategy:
    NOPROXY = "noproxy"
    REACTIVE = "reactive"
    PROACTIVE = "proactive"
    FAURAS = "fauras"

    ALL = (NOPROXY, REACTIVE, PROACTIVE, FAURAS)


def estimate_buffer(
    level_s: float,
    push_k: int,
    segment_duration_s: float,
    requested_kbps: float,
    allocated_kbps: float,
    buffer_max_s: float,
) -> float:
    """Project a client's buffer to the end of the push cycle it is requesting.

    The cycle delivers push_k segments of content while consuming the
    download time of push_k segments at the requested bitrate over the
    allocated rate.  The result is capped at the buffer capacity and may be
    negative when the request badly overshoots the allocation.
    """
    if allocated_kbps <= 0:
        raise ValueError(f"allocated rate must be positive, got {allocated_kbps}")
    if push_k < 1:
        raise ValueError(f"push factor must be >= 1, got {push_k}")
    cycle_content_s = push_k * segment_duration_s
    download_s = cycle_content_s * requested_kbps / allocated_kbps
    return min(level_s + cycle_content_s - download_s, buffer_max_s)


def should_overwrite(
    requested_kbps: int,
    fair_kbps: int,
    projected_buffer_s: float,
    push_k: int,
    segment_duration_s: float,
) -> bool:
    """Overwrite only an unfair request that the buffer cannot absorb."""
    return requested_kbps > fair_kbps and projected_buffer_s < push_k * segment_duration_s


@dataclass(frozen=True)
class OverwriteDecision:
    """Outcome of processing one request."""

    original_kbps: int
    final_kbps: int
    notify: bool = False
    fair_kbps: int | None = None
    projected_buffer_s: float | None = None

    @property
    def triggered(self) -> bool:
        return self.final_kbps != self.original_kbps


@dataclass
class ProxyState:
    """Registry of active clients plus the allocation they currently hold."""

    ladder: BitrateLadder
    capacity_kbps: float
    strategy: str
    push_k: int = 2
    buffer_max_s: float = 10.0
    clients: list[str] = field(default_factory=list)
    slices_kbps: dict[str, float] = field(default_factory=dict)
    pinned: set[str] = field(default_factory=set)
    rewrite_all_to_kbps: int | None = None

    def __post_init__(self) -> None:
        if self.strategy not in Strategy.ALL:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.rewrite_all_to_kbps is not None:
            self.ladder.level_of(self.rewrite_all_to_kbps)

    @property
    def sliced(self) -> bool:
        return self.strategy != Strategy.NOPROXY

    @property
    def fair_share_kbps(self) -> float:
        if not self.clients:
            raise ConfigError("no active clients")
        return self.capacity_kbps / len(self.clients)

    def allocate(self) -> dict[str, float]:
        """Recompute every unpinned client's slice as the equal share.

        Returns the slices that changed.  Pinned slices come from an explicit
        bandwidth schedule and are left alone.
        """
        if not self.sliced:
            return {}
        changed: dict[str, float] = {}
        if not self.clients:
            return changed
        share = self.fair_share_kbps
        for client_id in self.clients:
            if client_id in self.pinned:
                continue
            if self.slices_kbps.get(client_id) != share:
                self.slices_kbps[client_id] = share
                changed[client_id] = share
        return changed

    def join(self, client_id: str) -> dict[str, float]:
        if client_id in self.clients:
            raise ProtocolError(f"client {client_id} joined twice")
        self.clients.append(client_id)
        return self.allocate()

    def leave(self, client_id: str) -> dict[str, float]:
        if client_id not in self.clients:
            raise ProtocolError(f"client {client_id} is not active")
        self.clients.remove(client_id)
        self.slices_kbps.pop(client_id, None)
        self.pinned.discard(client_id)
        return self.allocate()

    def pin_slice(self, client_id: str, kbps: float) -> None:
        """Install a scheduled slice that allocation must not touch."""
        if client_id not in self.clients:
            raise ProtocolError(f"client {client_id} is not active")
        if kbps <= 0:
            raise ConfigError(f"scheduled slice must be positive, got {kbps}")
        self.slices_kbps[client_id] = kbps
        self.pinned.add(client_id)

    def slice_of(self, client_id: str) -> float:
        if not self.sliced:
            raise ConfigError("shared mode has no per-client slices")
        return self.slices_kbps[client_id]

    def process_request(
        self, client_id: str, ref: SegmentRef, headers: dict[str, str]
    ) -> OverwriteDecision:
        """Decide whether to forward, rewrite, or rewrite-and-notify."""
        if client_id not in self.clients:
            raise ProtocolError(f"request from unknown client {client_id}")
        if self.rewrite_all_to_kbps is not None:
            return OverwriteDecision(
                original_kbps=ref.bitrate_kbps,
                final_kbps=self.rewrite_all_to_kbps,
                notify=False,
            )
        if self.strategy in (Strategy.NOPROXY, Strategy.REACTIVE):
            return OverwriteDecision(ref.bitrate_kbps, ref.bitrate_kbps)
        allocated = self.slice_of(client_id)
        fair_kbps = fair_bitrate(self.ladder, allocated)
        if self.strategy == Strategy.PROACTIVE:
            if ref.bitrate_kbps > fair_kbps:
                return OverwriteDecision(ref.bitrate_kbps, fair_kbps, fair_kbps=fair_kbps)
            return OverwriteDecision(ref.bitrate_kbps, ref.bitrate_kbps, fair_kbps=fair_kbps)
        # Buffer-aware path.  A missing report is treated as an empty buffer.
        raw = headers.get(BUFFER_LEVEL_HEADER)
        level_s = parse_buffer_level(raw) if raw is not None else 0.0
        projected = estimate_buffer(
            level_s,
            self.push_k,
            self.ladder.segment_duration_s,
            ref.bitrate_kbps,
            allocated,
            self.buffer_max_s,
        )
        if should_overwrite(
            ref.bitrate_kbps,
            fair_kbps,
            projected,
            self.push_k,
            self.ladder.segment_duration_s,
        ):
            return OverwriteDecision(
                ref.bitrate_kbps,
                fair_kbps,
                notify=True,
                fair_kbps=fair_kbps,
                projected_buffer_s=projected,
            )
        return OverwriteDecision(
            ref.bitrate_kbps,
            ref.bitrate_kbps,
            fair_kbps=fair_kbps,
            projected_buffer_s=projected,
        )
