"""Media model: the bitrate ladder and segment arithmetic.

A video is split into fixed-duration segments, each encoded at every rung of a
bitrate ladder.  Segment payload size is bitrate times duration; there is no
per-segment size variation in this model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from fairpush.errors import ConfigError

# Rungs used by all built-in presets, in kbit/s.
DEFAULT_RATES_KBPS = (99, 192, 285, 470, 656, 838, 1118, 1401, 1855, 2324, 2791)

DEFAULT_SEGMENT_DURATION_S = 1.0
DEFAULT_TOTAL_SEGMENTS = 200


@dataclass(frozen=True)
class BitrateLadder:
    """Available encodings of one video.

    Parameters
    ----------
    rates_kbps:
        Strictly increasing encoding bitrates.
    segment_duration_s:
        Playback duration of every segment, seconds.
    total_segments:
        Number of segments in the video.
    """

    rates_kbps: tuple[int, ...] = DEFAULT_RATES_KBPS
    segment_duration_s: float = DEFAULT_SEGMENT_DURATION_S
    total_segments: int = DEFAULT_TOTAL_SEGMENTS

    def __post_init__(self) -> None:
        if not self.rates_kbps:
            raise ConfigError("bitrate ladder must have at least one rate")
        rates = tuple(self.rates_kbps)
        if any(r <= 0 for r in rates):
            raise ConfigError(f"ladder rates must be positive, got {rates}")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError(f"ladder rates must be strictly increasing, got {rates}")
        object.__setattr__(self, "rates_kbps", rates)
        if self.segment_duration_s <= 0:
            raise ConfigError("segment duration must be positive")
        if self.total_segments < 1:
            raise ConfigError("video needs at least one segment")

    @property
    def lowest_kbps(self) -> int:
        return self.rates_kbps[0]

    @property
    def highest_kbps(self) -> int:
        return self.rates_kbps[-1]

    def level_of(self, rate_kbps: int) -> int:
        """Index of an exact ladder rate.

        Raises
        ------
        ConfigError
            If the rate is not a ladder rung.
        """
        try:
            return self.rates_kbps.index(rate_kbps)
        except ValueError:
            raise ConfigError(f"{rate_kbps} kbps is not on the ladder {self.rates_kbps}") from None


@dataclass(frozen=True)
class SegmentRef:
    """Identity of one encoded segment: 1-based index plus encoding bitrate."""

    index: int
    bitrate_kbps: int


@dataclass(frozen=True)
class SegmentPayload:
    """A segment's bytes on the wire, reduced to its size."""

    ref: SegmentRef
    size_kbit: float = field(default=0.0)


def fair_bitrate(ladder: BitrateLadder, budget_kbps: float) -> int:
    """Highest ladder rate not exceeding a bandwidth budget.

    Budgets below the lowest rung clamp to the lowest rung, so the result is
    always a valid encoding.
    """
    chosen = ladder.rates_kbps[0]
    for rate in ladder.rates_kbps:
        if rate <= budget_kbps:
            chosen = rate
        else:
            break
    return chosen


def segment_size(ladder: BitrateLadder, ref: SegmentRef) -> float:
    """Payload size of a segment in kbit.

    Raises
    ------
    ConfigError
        If the ref's index or bitrate does not exist for this ladder.
    """
    if not 1 <= ref.index <= ladder.total_segments:
        raise ConfigError(
            f"segment index {ref.index} outside 1..{ladder.total_segments}"
        )
    ladder.level_of(ref.bitrate_kbps)
    return ref.bitrate_kbps * ladder.segment_duration_s


def payload_for(ladder: BitrateLadder, ref: SegmentRef) -> SegmentPayload:
    return SegmentPayload(ref=ref, size_kbit=segment_size(ladder, ref))
