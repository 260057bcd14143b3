"""Metrics over an event log: fairness, stalls, adaptation, push accounting.

Everything here is a pure function of a finished EventLog.  The bitrate a
client "holds" at any instant is the final value of its most recent request,
i.e. the rewritten value when the proxy changed it; that is what the network
actually carries.  Adaptation metrics look at the decision series instead:
every requested value and every rewritten value, in order, because a rewrite
is a bitrate decision too, just not one the client made.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field

from fairpush import events as ev
from fairpush.errors import ConfigError
from fairpush.events import EventLog
from fairpush.media import BitrateLadder, fair_bitrate

_EPS = 1e-9


def unfairness_index(rates_kbps: list[float]) -> float:
    """Deviation of per-client bitrates from an equal split, in [0, 1].

    0 means all clients hold the same bitrate.  The all-zero profile is
    treated as perfectly equal.
    """
    if not rates_kbps:
        raise ConfigError("unfairness index needs at least one rate")
    if any(r < 0 for r in rates_kbps):
        raise ConfigError(f"rates must be non-negative, got {rates_kbps}")
    square_sum = sum(r * r for r in rates_kbps)
    if square_sum == 0:
        return 0.0
    total = sum(rates_kbps)
    ratio = (total * total) / (len(rates_kbps) * square_sum)
    return math.sqrt(max(0.0, 1.0 - ratio))


# ---- per-client series ----


def decision_series(log: EventLog, client_id: str) -> list[tuple[float, int]]:
    """All bitrate decisions of one client in order: requests and rewrites."""
    series = []
    for e in log:
        if e.client_id != client_id:
            continue
        if e.kind in (ev.REQUEST_SENT, ev.REQUEST_REWRITTEN):
            series.append((e.time_s, e.bitrate_kbps))
    return series


def carried_rate_series(log: EventLog, client_id: str) -> list[tuple[float, int]]:
    """One (time, bitrate) point per request, with rewrites applied."""
    series: list[tuple[float, int]] = []
    for e in log:
        if e.client_id != client_id:
            continue
        if e.kind == ev.REQUEST_SENT:
            series.append((e.time_s, e.bitrate_kbps))
        elif e.kind == ev.REQUEST_REWRITTEN:
            series[-1] = (series[-1][0], e.bitrate_kbps)
    return series


def join_times(log: EventLog) -> dict[str, float]:
    return {e.client_id: e.time_s for e in log.of_kind(ev.CLIENT_JOIN)}


def leave_times(log: EventLog) -> dict[str, float]:
    return {e.client_id: e.time_s for e in log.of_kind(ev.CLIENT_LEAVE)}


# ---- fairness over time ----


def fairness_series(
    log: EventLog,
    tick_s: float,
    start_s: float,
    end_s: float,
) -> list[tuple[float, float]]:
    """Unfairness index sampled every tick_s over [start_s, end_s].

    At each tick, every client that has joined, not yet left, and issued at
    least one request contributes the final bitrate of its most recent
    request.  Ticks where no client qualifies are omitted.
    """
    if tick_s <= 0:
        raise ConfigError(f"tick must be positive, got {tick_s}")
    if end_s < start_s + _EPS:
        raise ConfigError(f"empty fairness window [{start_s}, {end_s}]")
    joins = join_times(log)
    leaves = leave_times(log)
    rates = {cid: carried_rate_series(log, cid) for cid in joins}
    times = {cid: [t for t, _ in series] for cid, series in rates.items()}
    series_out = []
    ticks = int((end_s - start_s) / tick_s + _EPS) + 1
    for i in range(ticks):
        t = start_s + i * tick_s
        sample = []
        for cid, joined_at in joins.items():
            if joined_at > t + _EPS:
                continue
            if cid in leaves and leaves[cid] <= t - _EPS:
                continue
            n = bisect_right(times[cid], t + _EPS)
            if n == 0:
                continue
            sample.append(float(rates[cid][n - 1][1]))
        if sample:
            series_out.append((t, unfairness_index(sample)))
    return series_out


def average_fairness(series: list[tuple[float, float]]) -> float:
    if not series:
        raise ConfigError("fairness series is empty")
    return sum(f for _, f in series) / len(series)


def default_fairness_window(log: EventLog) -> tuple[float, float]:
    """Averaging window: whole session, or from the last join to the first
    leave of the initial cohort when clients join mid-session."""
    joins = join_times(log)
    if not joins:
        raise ConfigError("log has no client joins")
    first = min(joins.values())
    last = max(joins.values())
    end = log.events[-1].time_s
    if last - first < _EPS:
        return first, end
    leaves = leave_times(log)
    initial = [cid for cid, t in joins.items() if t - first < _EPS]
    cohort_leaves = [leaves[cid] for cid in initial if cid in leaves]
    if cohort_leaves:
        end = min(cohort_leaves)
    return last, end


# ---- playback ----


def count_rebuffering(log: EventLog) -> tuple[dict[str, int], int]:
    per_client: dict[str, int] = {}
    for e in log.of_kind(ev.PLAYBACK_STALL):
        per_client[e.client_id] = per_client.get(e.client_id, 0) + 1
    return per_client, sum(per_client.values())


# ---- adaptation ----


def adaptation_delay(
    log: EventLog, client_id: str, drop_time_s: float, fair_kbps: int
) -> float:
    """Seconds from a fair-share drop until the client's bitrate first equals
    the new fair bitrate.  Rewrites count; a client already at the fair rate
    when the drop happens scores 0.  Never reaching it yields infinity.
    """
    series = decision_series(log, client_id)
    before = [kbps for t, kbps in series if t < drop_time_s - _EPS]
    if before and before[-1] == fair_kbps:
        return 0.0
    for t, kbps in series:
        if t < drop_time_s - _EPS:
            continue
        if kbps == fair_kbps:
            return t - drop_time_s
    return math.inf


def degradation_amplitude(
    log: EventLog, client_id: str, drop_time_s: float, fair_kbps: int
) -> float:
    """Size in kbps of the final step down into the fair bitrate."""
    series = decision_series(log, client_id)
    before = [kbps for t, kbps in series if t < drop_time_s - _EPS]
    if before and before[-1] == fair_kbps:
        return 0.0
    previous: int | None = None
    for t, kbps in series:
        if t >= drop_time_s - _EPS and kbps == fair_kbps:
            if previous is None:
                return 0.0
            return float(previous - fair_kbps)
        previous = kbps
    return math.inf


# ---- push accounting and delivery ----


def push_accounting(log: EventLog, client_id: str) -> tuple[int, int]:
    """(responses received, push promises received) for one client."""
    res = len(log.of_kind(ev.RESPONSE_DONE, client_id))
    pp = len(log.of_kind(ev.PUSH_PROMISE_RECEIVED, client_id))
    return res, pp


def count_discards(log: EventLog, client_id: str) -> int:
    return len(log.of_kind(ev.PUSH_DISCARDED, client_id))


def delivered_bitrates(log: EventLog, client_id: str) -> dict[int, int]:
    """Bitrate each segment finally entered the buffer with.

    A later response supersedes a discarded push for the same index, so the
    last delivery event per index wins.
    """
    delivered: dict[int, int] = {}
    for e in log:
        if e.client_id != client_id:
            continue
        if e.kind in (ev.RESPONSE_DONE, ev.PUSH_PAYLOAD_DONE):
            delivered[e.segment_index] = e.bitrate_kbps
    return delivered


def average_bitrate(
    log: EventLog, client_id: str, first_segment: int, last_segment: int
) -> float:
    if last_segment < first_segment:
        raise ConfigError(f"empty segment window [{first_segment}, {last_segment}]")
    delivered = delivered_bitrates(log, client_id)
    window = [
        kbps
        for index, kbps in delivered.items()
        if first_segment <= index <= last_segment
    ]
    if not window:
        raise ConfigError(
            f"client {client_id} delivered nothing in segments "
            f"[{first_segment}, {last_segment}]"
        )
    return sum(window) / len(window)


# ---- report ----

REPORT_CSV_COLUMNS = (
    "scenario",
    "strategy",
    "seed",
    "unfairness_avg",
    "rebuffer_total",
    "adaptation_delay_s",
    "degradation_amplitude_kbps",
    "responses_total",
    "push_promises_total",
    "push_discards_total",
)


@dataclass
class MetricsReport:
    """Everything measured from one run."""

    scenario: str = ""
    strategy: str = ""
    seed: int = 0
    unfairness_avg: float = 0.0
    per_tick_fairness: list = field(default_factory=list)
    fairness_window_s: tuple = (0.0, 0.0)
    rebuffer_per_client: dict = field(default_factory=dict)
    rebuffer_count: int = 0
    adaptation_fair_kbps: int | None = None
    adaptation_delay_s: dict = field(default_factory=dict)
    degradation_amplitude_kbps: dict = field(default_factory=dict)
    responses: dict = field(default_factory=dict)
    push_promises: dict = field(default_factory=dict)
    push_discards: dict = field(default_factory=dict)
    avg_bitrate_kbps: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def clean(value):
            if isinstance(value, float) and not math.isfinite(value):
                return None
            return value

        payload = {
            "scenario": self.scenario,
            "strategy": self.strategy,
            "seed": self.seed,
            "unfairness_avg": self.unfairness_avg,
            "fairness_window_s": list(self.fairness_window_s),
            "per_tick_fairness": [[t, f] for t, f in self.per_tick_fairness],
            "rebuffer_per_client": self.rebuffer_per_client,
            "rebuffer_count": self.rebuffer_count,
            "adaptation_fair_kbps": self.adaptation_fair_kbps,
            "adaptation_delay_s": {k: clean(v) for k, v in self.adaptation_delay_s.items()},
            "degradation_amplitude_kbps": {
                k: clean(v) for k, v in self.degradation_amplitude_kbps.items()
            },
            "responses": self.responses,
            "push_promises": self.push_promises,
            "push_discards": self.push_discards,
            "avg_bitrate_kbps": self.avg_bitrate_kbps,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        raw = json.loads(text)

        def revive(mapping):
            return {k: (math.inf if v is None else v) for k, v in mapping.items()}

        return cls(
            scenario=raw["scenario"],
            strategy=raw["strategy"],
            seed=raw["seed"],
            unfairness_avg=raw["unfairness_avg"],
            per_tick_fairness=[(t, f) for t, f in raw["per_tick_fairness"]],
            fairness_window_s=tuple(raw["fairness_window_s"]),
            rebuffer_per_client=raw["rebuffer_per_client"],
            rebuffer_count=raw["rebuffer_count"],
            adaptation_fair_kbps=raw["adaptation_fair_kbps"],
            adaptation_delay_s=revive(raw["adaptation_delay_s"]),
            degradation_amplitude_kbps=revive(raw["degradation_amplitude_kbps"]),
            responses=raw["responses"],
            push_promises=raw["push_promises"],
            push_discards=raw["push_discards"],
            avg_bitrate_kbps=raw["avg_bitrate_kbps"],
        )

    def to_csv_row(self) -> list[str]:
        tracked = sorted(self.adaptation_delay_s)
        delay = self.adaptation_delay_s[tracked[0]] if tracked else ""
        amplitude = self.degradation_amplitude_kbps[tracked[0]] if tracked else ""
        return [
            self.scenario,
            self.strategy,
            str(self.seed),
            repr(self.unfairness_avg),
            str(self.rebuffer_count),
            repr(delay) if delay != "" else "",
            repr(amplitude) if amplitude != "" else "",
            str(sum(self.responses.values())),
            str(sum(self.push_promises.values())),
            str(sum(self.push_discards.values())),
        ]


def build_report(
    log: EventLog,
    ladder: BitrateLadder,
    capacity_kbps: float,
    avg_segment_window: tuple[int, int] | None = None,
    scenario: str = "",
    strategy: str = "",
    seed: int = 0,
) -> MetricsReport:
    """Compute the full report for one finished run."""
    report = MetricsReport(scenario=scenario, strategy=strategy, seed=seed)
    joins = join_times(log)
    if not joins:
        raise ConfigError("log has no client joins")
    start, end = default_fairness_window(log)
    series = fairness_series(log, ladder.segment_duration_s, start, end)
    report.per_tick_fairness = series
    report.fairness_window_s = (start, end)
    report.unfairness_avg = average_fairness(series)
    report.rebuffer_per_client, report.rebuffer_count = count_rebuffering(log)
    first = min(joins.values())
    last = max(joins.values())
    if last - first > _EPS:
        leaves = leave_times(log)
        alive = [
            cid
            for cid, t in joins.items()
            if t <= last + _EPS and leaves.get(cid, math.inf) > last
        ]
        fair_kbps = fair_bitrate(ladder, capacity_kbps / len(alive))
        report.adaptation_fair_kbps = fair_kbps
        for cid in joins:
            if joins[cid] - first < _EPS:
                report.adaptation_delay_s[cid] = adaptation_delay(log, cid, last, fair_kbps)
                report.degradation_amplitude_kbps[cid] = degradation_amplitude(
                    log, cid, last, fair_kbps
                )
    window = avg_segment_window if avg_segment_window else (1, ladder.total_segments)
    for cid in joins:
        res, pp = push_accounting(log, cid)
        report.responses[cid] = res
        report.push_promises[cid] = pp
        report.push_discards[cid] = count_discards(log, cid)
        report.avg_bitrate_kbps[cid] = average_bitrate(log, cid, window[0], window[1])
    return report
