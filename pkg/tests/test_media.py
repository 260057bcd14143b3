import pytest

from fairpush.errors import ConfigError
from fairpush.media import (
    DEFAULT_RATES_KBPS,
    BitrateLadder,
    SegmentRef,
    fair_bitrate,
    payload_for,
    segment_size,
)


@pytest.fixture
def ladder() -> BitrateLadder:
    return BitrateLadder()


def test_default_ladder_shape(ladder):
    assert ladder.rates_kbps == DEFAULT_RATES_KBPS
    assert ladder.lowest_kbps == 99
    assert ladder.highest_kbps == 2791
    assert ladder.segment_duration_s == 1.0
    assert ladder.total_segments == 200


def test_level_of_maps_every_rate(ladder):
    for level, rate in enumerate(ladder.rates_kbps):
        assert ladder.level_of(rate) == level


def test_level_of_rejects_unknown_rate(ladder):
    with pytest.raises(ConfigError):
        ladder.level_of(100)


def test_ladder_requires_sorted_unique_rates():
    with pytest.raises(ConfigError):
        BitrateLadder(rates_kbps=(99, 99, 192))
    with pytest.raises(ConfigError):
        BitrateLadder(rates_kbps=(192, 99))
    with pytest.raises(ConfigError):
        BitrateLadder(rates_kbps=())


def test_ladder_rejects_bad_duration_and_count():
    with pytest.raises(ConfigError):
        BitrateLadder(segment_duration_s=0)
    with pytest.raises(ConfigError):
        BitrateLadder(total_segments=0)


def test_fair_bitrate_picks_highest_rate_under_budget(ladder):
    assert fair_bitrate(ladder, 3000) == 2791
    assert fair_bitrate(ladder, 1500) == 1401
    assert fair_bitrate(ladder, 1000) == 838
    assert fair_bitrate(ladder, 750) == 656


def test_fair_bitrate_is_exact_at_rung_boundaries(ladder):
    assert fair_bitrate(ladder, 838) == 838
    assert fair_bitrate(ladder, 837.999) == 656


def test_fair_bitrate_clamps_below_lowest_rung(ladder):
    assert fair_bitrate(ladder, 50) == 99
    assert fair_bitrate(ladder, 0) == 99


def test_segment_size_is_rate_times_duration(ladder):
    assert segment_size(ladder, SegmentRef(1, 2791)) == 2791.0
    half = BitrateLadder(segment_duration_s=0.5)
    assert segment_size(half, SegmentRef(3, 838)) == 419.0


def test_segment_size_validates_index_and_rate(ladder):
    with pytest.raises(ConfigError):
        segment_size(ladder, SegmentRef(0, 99))
    with pytest.raises(ConfigError):
        segment_size(ladder, SegmentRef(201, 99))
    with pytest.raises(ConfigError):
        segment_size(ladder, SegmentRef(1, 100))


def test_payload_for_carries_ref_and_size(ladder):
    payload = payload_for(ladder, SegmentRef(7, 656))
    assert payload.ref == SegmentRef(7, 656)
    assert payload.size_kbit == 656.0
