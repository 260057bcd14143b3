import pytest

from fairpush.errors import ConfigError, ProtocolError
from fairpush.media import BitrateLadder, SegmentRef
from fairpush.server import PushPolicy, ServerResponse, serve_request


@pytest.fixture
def ladder() -> BitrateLadder:
    return BitrateLadder(total_segments=10)


def test_push_policy_requires_positive_k():
    with pytest.raises(ConfigError):
        PushPolicy(0)
    with pytest.raises(ConfigError):
        PushPolicy(-2)


def test_plain_response_without_push(ladder):
    response = serve_request(ladder, PushPolicy(1), SegmentRef(3, 838))
    assert response.lead.ref == SegmentRef(3, 838)
    assert response.promises == ()


def test_two_push_promises_follow_the_lead(ladder):
    response = serve_request(ladder, PushPolicy(3), SegmentRef(4, 656))
    assert [p.ref.index for p in response.promises] == [5, 6]
    assert all(p.ref.bitrate_kbps == 656 for p in response.promises)


def test_promises_truncate_at_video_end(ladder):
    response = serve_request(ladder, PushPolicy(3), SegmentRef(9, 99))
    assert [p.ref.index for p in response.promises] == [10]
    last = serve_request(ladder, PushPolicy(3), SegmentRef(10, 99))
    assert last.promises == ()


def test_response_headers_pass_through(ladder):
    headers = {"x-fauras-bitrate": "838"}
    response = serve_request(ladder, PushPolicy(2), SegmentRef(1, 838), headers)
    assert response.headers == headers


def test_unknown_segment_or_rate_is_a_protocol_error(ladder):
    with pytest.raises(ProtocolError):
        serve_request(ladder, PushPolicy(2), SegmentRef(11, 99))
    with pytest.raises(ProtocolError):
        serve_request(ladder, PushPolicy(2), SegmentRef(0, 99))
    with pytest.raises(ProtocolError):
        serve_request(ladder, PushPolicy(2), SegmentRef(1, 100))


def test_payload_sizes_match_the_ladder(ladder):
    response = serve_request(ladder, PushPolicy(2), SegmentRef(1, 1401))
    assert response.lead.size_kbit == 1401.0
    assert response.promises[0].size_kbit == 1401.0
    assert isinstance(response, ServerResponse)
