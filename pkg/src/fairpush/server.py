"""Origin server with k-push delivery.

Each request for segment i is answered with the segment itself plus promises
for the following k-1 segments at the same bitrate, truncated at the end of
the video.  k=1 degenerates to plain request/response.  The server keeps no
per-client state; push bookkeeping lives entirely with the client and proxy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fairpush.errors import ConfigError, ProtocolError
from fairpush.media import BitrateLadder, SegmentPayload, SegmentRef, payload_for


@dataclass(frozen=True)
class PushPolicy:
    """How many segments one request fans out to (response plus pushes)."""

    k: int = 2

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError(f"push factor must be >= 1, got {self.k}")


@dataclass(frozen=True)
class ServerResponse:
    """Lead payload, promised payloads in delivery order, and response headers."""

    lead: SegmentPayload
    promises: tuple[SegmentPayload, ...] = ()
    headers: dict[str, str] = field(default_factory=dict)


def serve_request(
    ladder: BitrateLadder,
    policy: PushPolicy,
    ref: SegmentRef,
    headers: dict[str, str] | None = None,
) -> ServerResponse:
    """Build the response bundle for one segment request.

    Raises
    ------
    ProtocolError
        If the requested segment does not exist.
    """
    if not 1 <= ref.index <= ladder.total_segments:
        raise ProtocolError(
            f"segment {ref.index} not found (video has {ladder.total_segments})"
        )
    try:
        lead = payload_for(ladder, ref)
    except ConfigError as exc:
        raise ProtocolError(str(exc)) from exc
    last_promised = min(ref.index + policy.k - 1, ladder.total_segments)
    promises = tuple(
        payload_for(ladder, SegmentRef(i, ref.bitrate_kbps))
        for i in range(ref.index + 1, last_promised + 1)
    )
    return ServerResponse(lead=lead, promises=promises, headers=dict(headers or {}))
