"""Invariants checked over generated inputs.

Each test pins its example count explicitly; together they cover ten thousand
generated cases.  derandomize keeps the corpus identical between runs so a
pass here means the same thing on every machine.
"""

import math

from hypothesis import given, settings
from hypothesis import strategies as st

from fairpush import events as ev
from fairpush.client import AbrState
from fairpush.engine import Flow
from fairpush.media import BitrateLadder, fair_bitrate
from fairpush.metrics import count_discards, unfairness_index
from fairpush.proxy import ProxyState, Strategy, estimate_buffer, should_overwrite
from fairpush.scenario import ClientSpec, ScenarioConfig
from fairpush.session import Session, run_session

LADDER = BitrateLadder()

rates_lists = st.lists(
    st.floats(min_value=1.0, max_value=1e4, allow_nan=False), min_size=1, max_size=8
)


# ---- unfairness index ----


@settings(max_examples=2500, derandomize=True, deadline=None)
@given(rates=rates_lists, factor=st.floats(min_value=1e-3, max_value=1e3))
def test_unfairness_is_scale_invariant(rates, factor):
    scaled = [r * factor for r in rates]
    # the square root turns rounding noise near zero into ~1e-8, hence abs_tol
    assert math.isclose(
        unfairness_index(rates), unfairness_index(scaled), rel_tol=1e-9, abs_tol=1e-6
    )


@settings(max_examples=2500, derandomize=True, deadline=None)
@given(
    value=st.floats(min_value=1.0, max_value=1e4, allow_nan=False),
    count=st.integers(min_value=1, max_value=8),
    gap=st.one_of(st.just(0.0), st.floats(min_value=1e-2, max_value=2.0)),
)
def test_unfairness_zero_exactly_on_equal_profiles(value, count, gap):
    profile = [value] * count + ([value * (1.0 + gap)] if gap else [])
    index = unfairness_index(profile)
    if gap:
        assert index > 0.0
    else:
        assert index <= 1e-7
    assert 0.0 <= index <= 1.0


# ---- proxy equations ----


@settings(max_examples=2000, derandomize=True, deadline=None)
@given(
    level=st.floats(min_value=0.0, max_value=10.0),
    k=st.integers(min_value=1, max_value=5),
    duration=st.floats(min_value=0.2, max_value=4.0),
    rate=st.sampled_from(LADDER.rates_kbps),
    alloc=st.floats(min_value=1.0, max_value=1e5),
    cap=st.floats(min_value=1.0, max_value=60.0),
)
def test_estimate_buffer_matches_its_definition(level, k, duration, rate, alloc, cap):
    level = min(level, cap)
    projected = estimate_buffer(level, k, duration, rate, alloc, cap)
    direct = min(level + k * duration - k * duration * rate / alloc, cap)
    assert math.isclose(projected, direct, rel_tol=1e-12, abs_tol=1e-12)
    assert projected <= cap


@settings(max_examples=1000, derandomize=True, deadline=None)
@given(
    requested=st.sampled_from(LADDER.rates_kbps),
    fair=st.sampled_from(LADDER.rates_kbps),
    projected=st.floats(min_value=-20.0, max_value=20.0),
    k=st.integers(min_value=1, max_value=5),
    duration=st.floats(min_value=0.2, max_value=4.0),
)
def test_should_overwrite_means_overshoot_while_starving(
    requested, fair, projected, k, duration
):
    decision = should_overwrite(requested, fair, projected, k, duration)
    assert decision == (requested > fair and projected < k * duration)


@settings(max_examples=1000, derandomize=True, deadline=None)
@given(budget=st.floats(min_value=0.0, max_value=5e3, allow_nan=False))
def test_fair_bitrate_is_the_largest_affordable_rung(budget):
    chosen = fair_bitrate(LADDER, budget)
    affordable = [r for r in LADDER.rates_kbps if r <= budget]
    assert chosen == (max(affordable) if affordable else LADDER.rates_kbps[0])


# ---- client adaptation ----


@settings(max_examples=400, derandomize=True, deadline=None)
@given(
    samples=st.lists(
        st.floats(min_value=10.0, max_value=6e3), min_size=1, max_size=25
    ),
    window=st.integers(min_value=1, max_value=8),
    up_hold=st.integers(min_value=0, max_value=4),
)
def test_adaptation_never_skips_a_ladder_level(samples, window, up_hold):
    abr = AbrState(window=window, up_hold=up_hold)
    for kbps in samples:
        abr.add_sample(kbps)
        before = abr.level
        rate = abr.select_bitrate(LADDER)
        assert abs(abr.level - before) <= 1
        assert rate == LADDER.rates_kbps[abr.level]


@settings(max_examples=300, derandomize=True, deadline=None)
@given(
    forced=st.sampled_from(LADDER.rates_kbps),
    until=st.integers(min_value=1, max_value=50),
    samples=st.lists(st.floats(min_value=10.0, max_value=6e3), min_size=1, max_size=10),
)
def test_forced_bitrate_dominates_until_released(forced, until, samples):
    abr = AbrState()
    abr.force(forced, LADDER, until_index=until)
    for kbps in samples:
        abr.add_sample(kbps)
        assert abr.select_bitrate(LADDER) == forced
    abr.clear_forced_if_passed(until)
    assert abr.select_bitrate(LADDER) == forced
    abr.clear_forced_if_passed(until + 1)
    rate = abr.select_bitrate(LADDER)
    assert abs(LADDER.level_of(rate) - LADDER.level_of(forced)) <= 1


# ---- bandwidth conservation ----


@settings(max_examples=200, derandomize=True, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=4),
    stages=st.lists(st.integers(min_value=0, max_value=3), min_size=4, max_size=4),
    active_mask=st.lists(st.booleans(), min_size=4, max_size=4),
)
def test_shared_link_rates_always_sum_to_capacity(n, stages, active_mask):
    if not any(active_mask[:n]):
        active_mask[0] = True
    cfg = ScenarioConfig(
        strategy=Strategy.NOPROXY,
        total_segments=5,
        clients=tuple(ClientSpec(f"a{i + 1}") for i in range(n)),
    )
    session = Session(cfg, seed=1)
    for i, cid in enumerate(session.order):
        session.ramp_stage[cid] = stages[i]
        if active_mask[i]:
            session.active[cid] = Flow(cid, 100.0)
    active = [cid for cid in session.order if session.active[cid] is not None]
    rates = [session._rate_of(cid) for cid in active]
    assert all(r > 0 for r in rates)
    assert math.isclose(sum(rates), cfg.capacity_kbps, rel_tol=1e-9)


@settings(max_examples=100, derandomize=True, deadline=None)
@given(ops=st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=12))
def test_sliced_allocation_is_always_an_exact_equal_split(ops):
    proxy = ProxyState(ladder=LADDER, capacity_kbps=3000.0, strategy=Strategy.FAURAS)
    members: list[str] = []
    for op in ops:
        cid = f"a{op + 1}"
        if cid in members:
            proxy.leave(cid)
            members.remove(cid)
        else:
            proxy.join(cid)
            members.append(cid)
        for member in members:
            assert proxy.slice_of(member) == 3000.0 / len(members)


# ---- end-to-end pushes ----


@settings(max_examples=100, derandomize=True, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=3),
    segments=st.integers(min_value=5, max_value=8),
    k=st.integers(min_value=1, max_value=3),
    capacity=st.floats(min_value=500.0, max_value=6000.0),
    seed=st.integers(min_value=0, max_value=9999),
)
def test_noticed_rewrites_never_cause_discards(n, segments, k, capacity, seed):
    cfg = ScenarioConfig(
        strategy=Strategy.FAURAS,
        capacity_kbps=capacity,
        push_k=k,
        total_segments=segments,
        clients=tuple(ClientSpec(f"a{i + 1}") for i in range(n)),
    )
    log = run_session(cfg, seed)
    for i in range(n):
        cid = f"a{i + 1}"
        # every rewrite carried a notice, so nothing pushed goes to waste
        assert count_discards(log, cid) == 0
        played = [e.segment_index for e in log.of_kind(ev.SEGMENT_PLAYED, cid)]
        assert played == list(range(1, segments + 1))
