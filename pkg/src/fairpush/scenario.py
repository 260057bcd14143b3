"""Scenario configuration, built-in presets, and the repetition runner.

Scenarios load from TOML or from a named preset.  Validation is strict:
unknown keys are errors, join rules must reference existing clients, and a
bandwidth schedule requires a slicing strategy.  Presets cover the standard
experiment setups: simultaneous joins at three population sizes (1-A, 1-B,
1-C), late joins against a single established client (2-A, 2-B), a scheduled
slice staircase (table2), and a single-client push-accounting run (table3).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from fairpush import events as ev
from fairpush.client import ADAPTIVE, FIXED_LOWEST
from fairpush.errors import ConfigError
from fairpush.events import EventLog
from fairpush.media import (
    DEFAULT_RATES_KBPS,
    DEFAULT_SEGMENT_DURATION_S,
    DEFAULT_TOTAL_SEGMENTS,
    BitrateLadder,
)
from fairpush.metrics import (
    REPORT_CSV_COLUMNS,
    MetricsReport,
    build_report,
)
from fairpush.proxy import Strategy
from fairpush.session import run_session

DEFAULT_CAPACITY_KBPS = 3000.0
DEFAULT_PUSH_K = 2
DEFAULT_BUFFER_MAX_S = 10.0
DEFAULT_BASE_RTT_S = 0.05
DEFAULT_REPETITIONS = 5


@dataclass(frozen=True)
class AbrConfig:
    """Client adaptation parameters shared by every client of a scenario."""

    mode: str = ADAPTIVE
    window: int = 5
    safety: float = 1.0
    up_hold: int = 2
    startup_s: float = 2.0
    resume_s: float = 2.0

    def __post_init__(self) -> None:
        if self.mode not in (ADAPTIVE, FIXED_LOWEST):
            raise ConfigError(f"abr.mode must be adaptive or fixed_lowest, got {self.mode!r}")
        if self.window < 1:
            raise ConfigError(f"abr.window must be >= 1, got {self.window}")
        if self.safety <= 0:
            raise ConfigError(f"abr.safety must be positive, got {self.safety}")
        if self.up_hold < 0:
            raise ConfigError(f"abr.up_hold cannot be negative, got {self.up_hold}")
        if self.startup_s <= 0 or self.resume_s <= 0:
            raise ConfigError("abr start thresholds must be positive")


@dataclass(frozen=True)
class ClientSpec:
    """One client and its join rule: a fixed time, or another client's progress."""

    client_id: str
    join_at_s: float = 0.0
    join_after_client: str | None = None
    join_after_segments: int | None = None

    def __post_init__(self) -> None:
        if not self.client_id:
            raise ConfigError("client id cannot be empty")
        if (self.join_after_client is None) != (self.join_after_segments is None):
            raise ConfigError(
                f"client {self.client_id}: join_after_client and join_after_segments "
                "must be given together"
            )
        if self.join_after_client is None and self.join_at_s < 0:
            raise ConfigError(f"client {self.client_id}: join_at_s cannot be negative")
        if self.join_after_segments is not None and self.join_after_segments < 1:
            raise ConfigError(f"client {self.client_id}: join_after_segments must be >= 1")


@dataclass(frozen=True)
class ScheduleEntry:
    """A pinned slice override, applied at a time or on a client's progress."""

    client_id: str
    slice_kbps: float
    at_s: float | None = None
    after_segments: int | None = None
    trigger_client: str | None = None

    def __post_init__(self) -> None:
        if self.slice_kbps <= 0:
            raise ConfigError(f"slice_kbps must be positive, got {self.slice_kbps}")
        timed = self.at_s is not None
        triggered = self.after_segments is not None or self.trigger_client is not None
        if timed == triggered:
            raise ConfigError(
                f"schedule entry for {self.client_id}: give either at_s or "
                "after_segments with trigger_client"
            )
        if triggered and (self.after_segments is None or self.trigger_client is None):
            raise ConfigError(
                f"schedule entry for {self.client_id}: after_segments and "
                "trigger_client must be given together"
            )
        if timed and self.at_s < 0:
            raise ConfigError("schedule at_s cannot be negative")
        if self.after_segments is not None and self.after_segments < 1:
            raise ConfigError("schedule after_segments must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs: media, link, strategy, clients, repetitions."""

    name: str = "custom"
    capacity_kbps: float = DEFAULT_CAPACITY_KBPS
    push_k: int = DEFAULT_PUSH_K
    buffer_max_s: float = DEFAULT_BUFFER_MAX_S
    base_rtt_s: float = DEFAULT_BASE_RTT_S
    strategy: str = Strategy.FAURAS
    rewrite_all_to_kbps: int | None = None
    seed: int = 1
    repetitions: int = DEFAULT_REPETITIONS
    rates_kbps: tuple[int, ...] = DEFAULT_RATES_KBPS
    segment_duration_s: float = DEFAULT_SEGMENT_DURATION_S
    total_segments: int = DEFAULT_TOTAL_SEGMENTS
    abr: AbrConfig = field(default_factory=AbrConfig)
    clients: tuple[ClientSpec, ...] = (ClientSpec("a1"),)
    bandwidth_schedule: tuple[ScheduleEntry, ...] = ()
    avg_segment_window: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "rates_kbps", tuple(self.rates_kbps))
        object.__setattr__(self, "clients", tuple(self.clients))
        object.__setattr__(self, "bandwidth_schedule", tuple(self.bandwidth_schedule))
        if self.capacity_kbps <= 0:
            raise ConfigError("capacity_kbps must be positive")
        if self.push_k < 1:
            raise ConfigError(f"push_k must be >= 1, got {self.push_k}")
        if self.buffer_max_s <= 0:
            raise ConfigError("buffer_max_s must be positive")
        if self.base_rtt_s < 0:
            raise ConfigError("base_rtt_s cannot be negative")
        if self.strategy not in Strategy.ALL:
            raise ConfigError(
                f"strategy must be one of {', '.join(Strategy.ALL)}, got {self.strategy!r}"
            )
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        ladder = self.build_ladder()
        if not self.clients:
            raise ConfigError("scenario needs at least one client")
        ids = [c.client_id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate client ids in {ids}")
        for spec in self.clients:
            if spec.join_after_client is not None:
                if spec.join_after_client not in ids:
                    raise ConfigError(
                        f"client {spec.client_id} joins after unknown client "
                        f"{spec.join_after_client!r}"
                    )
                if spec.join_after_client == spec.client_id:
                    raise ConfigError(f"client {spec.client_id} cannot join after itself")
                if spec.join_after_segments > self.total_segments:
                    raise ConfigError(
                        f"client {spec.client_id} waits for segment "
                        f"{spec.join_after_segments} of a {self.total_segments}-segment video"
                    )
        if self.bandwidth_schedule and self.strategy == Strategy.NOPROXY:
            raise ConfigError("bandwidth_schedule needs a slicing strategy, not noproxy")
        for entry in self.bandwidth_schedule:
            if entry.client_id not in ids:
                raise ConfigError(f"schedule references unknown client {entry.client_id!r}")
            if entry.trigger_client is not None and entry.trigger_client not in ids:
                raise ConfigError(
                    f"schedule references unknown trigger client {entry.trigger_client!r}"
                )
        if self.rewrite_all_to_kbps is not None:
            if self.strategy == Strategy.NOPROXY:
                raise ConfigError("rewrite_all_to_kbps needs a proxy strategy")
            ladder.level_of(self.rewrite_all_to_kbps)
        if self.avg_segment_window is not None:
            lo, hi = self.avg_segment_window
            if not 1 <= lo <= hi <= self.total_segments:
                raise ConfigError(
                    f"avg_segment_window [{lo}, {hi}] outside 1..{self.total_segments}"
                )
            object.__setattr__(self, "avg_segment_window", (lo, hi))
        if self.abr.startup_s > self.buffer_max_s or self.abr.resume_s > self.buffer_max_s:
            raise ConfigError("abr start thresholds cannot exceed buffer_max_s")

    def build_ladder(self) -> BitrateLadder:
        return BitrateLadder(
            rates_kbps=self.rates_kbps,
            segment_duration_s=self.segment_duration_s,
            total_segments=self.total_segments,
        )


# ---- TOML loading ----

_TOP_KEYS = {
    "name",
    "capacity_kbps",
    "push_k",
    "buffer_max_s",
    "base_rtt_s",
    "strategy",
    "rewrite_all_to_kbps",
    "seed",
    "repetitions",
    "avg_segment_window",
    "ladder",
    "abr",
    "clients",
    "bandwidth_schedule",
}
_LADDER_KEYS = {"rates_kbps", "segment_duration_s", "total_segments"}
_ABR_KEYS = {"mode", "window", "safety", "up_hold", "startup_s", "resume_s"}
_CLIENT_KEYS = {"id", "join_at_s", "join_after_client", "join_after_segments"}
_SCHEDULE_KEYS = {"client", "slice_kbps", "at_s", "after_segments", "trigger_client"}


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def parse_scenario(text: str, name: str = "custom") -> ScenarioConfig:
    """Parse and validate a TOML scenario document."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario {name}: {exc}") from None
    _reject_unknown(raw, _TOP_KEYS, f"scenario {name}")
    kwargs: dict = {"name": raw.get("name", name)}
    for key in (
        "capacity_kbps",
        "push_k",
        "buffer_max_s",
        "base_rtt_s",
        "strategy",
        "rewrite_all_to_kbps",
        "seed",
        "repetitions",
    ):
        if key in raw:
            kwargs[key] = raw[key]
    if "avg_segment_window" in raw:
        window = raw["avg_segment_window"]
        if not (isinstance(window, list) and len(window) == 2):
            raise ConfigError("avg_segment_window must be a two-element array")
        kwargs["avg_segment_window"] = (window[0], window[1])
    ladder = raw.get("ladder", {})
    _reject_unknown(ladder, _LADDER_KEYS, "ladder")
    if "rates_kbps" in ladder:
        kwargs["rates_kbps"] = tuple(ladder["rates_kbps"])
    if "segment_duration_s" in ladder:
        kwargs["segment_duration_s"] = ladder["segment_duration_s"]
    if "total_segments" in ladder:
        kwargs["total_segments"] = ladder["total_segments"]
    abr = raw.get("abr", {})
    _reject_unknown(abr, _ABR_KEYS, "abr")
    if abr:
        kwargs["abr"] = AbrConfig(**abr)
    if "clients" in raw:
        specs = []
        for i, entry in enumerate(raw["clients"]):
            _reject_unknown(entry, _CLIENT_KEYS, f"clients[{i}]")
            if "id" not in entry:
                raise ConfigError(f"clients[{i}] is missing an id")
            fields = {k: v for k, v in entry.items() if k != "id"}
            specs.append(ClientSpec(client_id=entry["id"], **fields))
        kwargs["clients"] = tuple(specs)
    if "bandwidth_schedule" in raw:
        entries = []
        for i, entry in enumerate(raw["bandwidth_schedule"]):
            _reject_unknown(entry, _SCHEDULE_KEYS, f"bandwidth_schedule[{i}]")
            if "client" not in entry:
                raise ConfigError(f"bandwidth_schedule[{i}] is missing a client")
            fields = {k: v for k, v in entry.items() if k != "client"}
            entries.append(ScheduleEntry(client_id=entry["client"], **fields))
        kwargs["bandwidth_schedule"] = tuple(entries)
    return ScenarioConfig(**kwargs)


# ---- presets ----


def _simultaneous(name: str, n_clients: int) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        clients=tuple(ClientSpec(f"a{i + 1}") for i in range(n_clients)),
    )


def _late_join(name: str, n_joiners: int) -> ScenarioConfig:
    joiners = tuple(
        ClientSpec(f"a{i + 2}", join_after_client="a1", join_after_segments=100)
        for i in range(n_joiners)
    )
    return ScenarioConfig(
        name=name,
        clients=(ClientSpec("a1"),) + joiners,
        avg_segment_window=(100, 200),
    )


def _build_presets() -> dict[str, ScenarioConfig]:
    presets = {
        "1-A": _simultaneous("1-A", 2),
        "1-B": _simultaneous("1-B", 3),
        "1-C": _simultaneous("1-C", 4),
        "2-A": _late_join("2-A", 1),
        "2-B": _late_join("2-B", 2),
        "table2": ScenarioConfig(
            name="table2",
            strategy=Strategy.REACTIVE,
            clients=(ClientSpec("a1"),),
            bandwidth_schedule=(
                ScheduleEntry("a1", 1000.0, at_s=0.0),
                ScheduleEntry("a1", 3000.0, after_segments=60, trigger_client="a1"),
                ScheduleEntry("a1", 1000.0, after_segments=120, trigger_client="a1"),
            ),
        ),
        "table3": ScenarioConfig(
            name="table3",
            strategy=Strategy.REACTIVE,
            capacity_kbps=100_000.0,
            total_segments=100,
            abr=AbrConfig(mode=FIXED_LOWEST),
            clients=(ClientSpec("a1"),),
        ),
    }
    return presets


_PRESETS = _build_presets()


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def preset(name: str) -> ScenarioConfig:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Load a scenario from a preset name or a TOML file path."""
    if isinstance(source, str) and source in _PRESETS:
        return _PRESETS[source]
    path = Path(source)
    if not path.exists():
        raise ConfigError(
            f"{source!r} is neither a preset ({', '.join(preset_names())}) "
            "nor an existing file"
        )
    return parse_scenario(path.read_text(), name=path.stem)


# ---- running ----


@dataclass
class RunResult:
    """One repetition: its seed, full event log, and metrics."""

    seed: int
    log: EventLog
    report: MetricsReport
    out_dir: Path | None = None


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _series_csv(log: EventLog) -> str:
    carried: dict[str, int] = {}
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("time_s", "client_id", "bitrate_kbps", "buffer_s"))
    sampled = {
        ev.RESPONSE_DONE,
        ev.PUSH_PAYLOAD_DONE,
        ev.SEGMENT_PLAYED,
        ev.PLAYBACK_START,
        ev.PLAYBACK_STALL,
        ev.PLAYBACK_RESUME,
        ev.CLIENT_JOIN,
        ev.CLIENT_LEAVE,
    }
    for e in log:
        if e.kind == ev.REQUEST_SENT or e.kind == ev.REQUEST_REWRITTEN:
            carried[e.client_id] = e.bitrate_kbps
        elif e.kind in sampled and e.buffer_s is not None:
            rate = carried.get(e.client_id, "")
            writer.writerow((repr(e.time_s), e.client_id, rate, repr(e.buffer_s)))
    return out.getvalue()


def _fairness_csv(report: MetricsReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("time_s", "unfairness"))
    for t, f in report.per_tick_fairness:
        writer.writerow((repr(t), repr(f)))
    return out.getvalue()


def _accounting_csv(log: EventLog, total_segments: int) -> str:
    res: dict[int, int] = {}
    pp: dict[int, int] = {}
    for e in log:
        if e.kind == ev.RESPONSE_DONE:
            res[e.segment_index] = res.get(e.segment_index, 0) + 1
        elif e.kind == ev.PUSH_PROMISE_RECEIVED:
            pp[e.segment_index] = pp.get(e.segment_index, 0) + 1
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("segment_index", "res_count", "pp_count"))
    for index in range(1, total_segments + 1):
        writer.writerow((index, res.get(index, 0), pp.get(index, 0)))
    return out.getvalue()


def run_scenario(
    config: ScenarioConfig,
    out_dir: str | Path | None = None,
    report_format: str = "json",
) -> list[RunResult]:
    """Run every repetition of a scenario; optionally write artifacts.

    Repetition i runs with seed config.seed + i.  With an output directory,
    each run gets events.csv, series.csv, fairness.csv, accounting.csv and
    (json format) metrics.json; csv format collects metrics in summary.csv
    at the top level instead.
    """
    if report_format not in ("json", "csv"):
        raise ConfigError(f"report format must be json or csv, got {report_format!r}")
    ladder = config.build_ladder()
    results = []
    summary_rows = []
    base = Path(out_dir) if out_dir is not None else None
    for i in range(config.repetitions):
        seed = config.seed + i
        log = run_session(config, seed)
        report = build_report(
            log,
            ladder,
            config.capacity_kbps,
            avg_segment_window=config.avg_segment_window,
            scenario=config.name,
            strategy=config.strategy,
            seed=seed,
        )
        run_dir = None
        if base is not None:
            run_dir = base / f"{config.name}-{config.strategy}-seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            _write_atomic(run_dir / "events.csv", log.to_csv())
            _write_atomic(run_dir / "series.csv", _series_csv(log))
            _write_atomic(run_dir / "fairness.csv", _fairness_csv(report))
            _write_atomic(
                run_dir / "accounting.csv", _accounting_csv(log, config.total_segments)
            )
            if report_format == "json":
                _write_atomic(run_dir / "metrics.json", report.to_json())
            else:
                summary_rows.append(report.to_csv_row())
        results.append(RunResult(seed=seed, log=log, report=report, out_dir=run_dir))
    if base is not None and summary_rows:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(REPORT_CSV_COLUMNS)
        writer.writerows(summary_rows)
        _write_atomic(base / "summary.csv", out.getvalue())
    return results


def with_strategy(config: ScenarioConfig, strategy: str) -> ScenarioConfig:
    return replace(config, strategy=strategy)
