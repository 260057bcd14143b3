"""Deterministic simulator for multi-client adaptive streaming over HTTP/2 server push.

The package models a bottleneck link shared by video clients whose segment
requests pass through a proxy that can slice bandwidth and overwrite bitrate
decisions.  Everything is event-driven and seeded, so a run is a pure function
of its scenario config and seed.
"""

from fairpush.media import BitrateLadder, SegmentRef, fair_bitrate, segment_size
from fairpush.metrics import MetricsReport, unfairness_index
from fairpush.proxy import Strategy
from fairpush.scenario import ScenarioConfig, load_scenario, preset_names, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BitrateLadder",
    "SegmentRef",
    "fair_bitrate",
    "segment_size",
    "MetricsReport",
    "unfairness_index",
    "Strategy",
    "ScenarioConfig",
    "load_scenario",
    "preset_names",
    "run_scenario",
    "__version__",
]
