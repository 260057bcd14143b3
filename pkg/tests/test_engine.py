import pytest

from fairpush.engine import (
    SHARED,
    SLICED,
    EventQueue,
    Flow,
    LinkModel,
    client_rng,
)
from fairpush.errors import ConfigError, SimulationError


def test_client_rng_is_reproducible_and_distinct():
    a = client_rng(7, "a1")
    b = client_rng(7, "a1")
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]
    other = client_rng(7, "a2")
    assert a.random() != other.random()
    reseeded = client_rng(8, "a1")
    assert client_rng(7, "a1").random() != reseeded.random()


def test_event_queue_orders_by_time_then_insertion():
    q = EventQueue()
    q.schedule(2.0, "late", None)
    q.schedule(1.0, "first", None)
    q.schedule(1.0, "second", None)
    kinds = [q.next_event().kind for _ in range(3)]
    assert kinds == ["first", "second", "late"]
    assert q.next_event() is None


def test_event_queue_advances_clock():
    q = EventQueue()
    q.schedule(1.5, "x", None)
    assert q.now_s == 0.0
    q.next_event()
    assert q.now_s == 1.5


def test_event_queue_rejects_scheduling_in_the_past():
    q = EventQueue()
    q.schedule(1.0, "x", None)
    q.next_event()
    with pytest.raises(AssertionError):
        q.schedule(0.5, "y", None)


def test_link_model_validation():
    with pytest.raises(ConfigError):
        LinkModel(capacity_kbps=0, mode=SHARED)
    with pytest.raises(ConfigError):
        LinkModel(capacity_kbps=3000, mode="half-duplex")
    with pytest.raises(ConfigError):
        LinkModel(capacity_kbps=3000, mode=SHARED, base_rtt_s=-0.1)


def test_sliced_link_tracks_slices():
    link = LinkModel(capacity_kbps=3000, mode=SLICED)
    link.set_slice("a1", 1500.0)
    assert link.slice_of("a1") == 1500.0
    link.set_slice("a1", 1000.0)
    assert link.slice_of("a1") == 1000.0
    link.clear_slice("a1")
    with pytest.raises(SimulationError):
        link.slice_of("a1")


def test_shared_link_has_no_slices():
    link = LinkModel(capacity_kbps=3000, mode=SHARED)
    with pytest.raises(SimulationError):
        link.slice_of("a1")


def test_flow_starts_with_full_remaining():
    flow = Flow("a1", 500.0)
    assert flow.remaining_kbit == 500.0
