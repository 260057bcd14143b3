"""Acceptance gate: one test per shipping criterion.

Each criterion reports as a single pass/fail line under pytest -v.  Runs are
cached per (preset, strategy) pair so the matrix is built once; the stated
runtime budgets cover the actual simulation work, measured when each pair is
first built.
"""

import math
import random
import subprocess
import sys
import time
from dataclasses import replace
from math import isclose
from pathlib import Path

from fairpush import events as ev
from fairpush.media import BitrateLadder, fair_bitrate
from fairpush.metrics import (
    count_discards,
    decision_series,
    push_accounting,
    unfairness_index,
)
from fairpush.proxy import ProxyState, Strategy, estimate_buffer, should_overwrite
from fairpush.scenario import preset, run_scenario, with_strategy
from fairpush.session import run_session

ROOT = Path(__file__).resolve().parent.parent

REL_TOL = 1e-9
ORACLE_INPUTS = 1000
ORACLE_BUDGET_S = 1.0
ACCOUNTING_BUDGET_S = 5.0
FAIRNESS_RATIO = 0.5
FAIRNESS_BUDGET_S = 30.0
PROPERTY_BUDGET_S = 60.0
SEEDS = (1, 2, 3, 4, 5)

PROXY_STRATEGIES = (Strategy.REACTIVE, Strategy.PROACTIVE, Strategy.FAURAS)

_CACHE: dict[tuple[str, str], list] = {}
_BUILD_S: dict[tuple[str, str], float] = {}


def matrix(preset_name: str, strategy: str):
    """Five seeded runs of a preset under one strategy, built once."""
    key = (preset_name, strategy)
    if key not in _CACHE:
        config = with_strategy(preset(preset_name), strategy)
        started = time.perf_counter()
        _CACHE[key] = run_scenario(config)
        _BUILD_S[key] = time.perf_counter() - started
    return _CACHE[key]


def test_criterion_01_equation_oracles():
    rng = random.Random(20260822)
    ladder = BitrateLadder()
    started = time.perf_counter()
    for _ in range(ORACLE_INPUTS):
        capacity = rng.uniform(100.0, 1e6)
        population = rng.randint(1, 20)
        proxy = ProxyState(ladder=ladder, capacity_kbps=capacity, strategy=Strategy.FAURAS)
        for i in range(population):
            proxy.join(f"c{i}")
        assert isclose(proxy.fair_share_kbps, capacity / population, rel_tol=REL_TOL)
    for _ in range(ORACLE_INPUTS):
        budget = rng.uniform(0.0, 4000.0)
        affordable = [r for r in ladder.rates_kbps if r <= budget]
        expected = max(affordable) if affordable else ladder.rates_kbps[0]
        assert fair_bitrate(ladder, budget) == expected
    for _ in range(ORACLE_INPUTS):
        cap = rng.uniform(1.0, 60.0)
        level = rng.uniform(0.0, cap)
        k = rng.randint(1, 5)
        duration = rng.uniform(0.2, 4.0)
        rate = rng.choice(ladder.rates_kbps)
        alloc = rng.uniform(1.0, 1e5)
        direct = min(level + k * duration - k * duration * rate / alloc, cap)
        assert isclose(
            estimate_buffer(level, k, duration, rate, alloc, cap),
            direct,
            rel_tol=REL_TOL,
            abs_tol=REL_TOL,
        )
    for _ in range(ORACLE_INPUTS):
        requested = rng.choice(ladder.rates_kbps)
        fair = rng.choice(ladder.rates_kbps)
        projected = rng.uniform(-20.0, 20.0)
        k = rng.randint(1, 5)
        duration = rng.uniform(0.2, 4.0)
        assert should_overwrite(requested, fair, projected, k, duration) == (
            requested > fair and projected < k * duration
        )
    for _ in range(ORACLE_INPUTS):
        rates = [rng.uniform(0.0, 5000.0) for _ in range(rng.randint(1, 12))]
        total = math.fsum(rates)
        squares = math.fsum(r * r for r in rates)
        if squares == 0:
            expected = 0.0
        else:
            expected = math.sqrt(max(0.0, 1.0 - total * total / (len(rates) * squares)))
        assert isclose(unfairness_index(rates), expected, rel_tol=REL_TOL, abs_tol=REL_TOL)
    assert time.perf_counter() - started < ORACLE_BUDGET_S


def test_criterion_02_push_accounting_exact():
    started = time.perf_counter()

    def case(push_k: int, rewrite: int | None = None):
        config = replace(
            preset("table3"), push_k=push_k, rewrite_all_to_kbps=rewrite, repetitions=1
        )
        log = run_session(config, seed=1)
        return push_accounting(log, "a1")

    assert case(push_k=1) == (100, 0)
    assert case(push_k=2) == (50, 50)
    # every request rewritten off the client's rate, with no notice sent
    assert case(push_k=2, rewrite=192) == (100, 99)
    assert time.perf_counter() - started < ACCOUNTING_BUDGET_S


def test_criterion_03_push_parity_and_waste():
    for name in ("2-A", "2-B"):
        for strategy in (Strategy.REACTIVE, Strategy.FAURAS):
            for result in matrix(name, strategy):
                res, pp = push_accounting(result.log, "a1")
                assert (res, pp) == (100, 100)
                assert count_discards(result.log, "a1") == 0
        for result in matrix(name, Strategy.PROACTIVE):
            res, pp = push_accounting(result.log, "a1")
            assert res == pp > 100
            assert count_discards(result.log, "a1") >= 1


def test_criterion_04_fairness_improvement():
    for name in ("1-A", "1-B", "1-C"):
        baseline = [r.report.unfairness_avg for r in matrix(name, Strategy.NOPROXY)]
        baseline_avg = sum(baseline) / len(baseline)
        for strategy in PROXY_STRATEGIES:
            shaped = [r.report.unfairness_avg for r in matrix(name, strategy)]
            shaped_avg = sum(shaped) / len(shaped)
            assert shaped_avg <= FAIRNESS_RATIO * baseline_avg
    spent = sum(
        _BUILD_S[(name, strategy)]
        for name in ("1-A", "1-B", "1-C")
        for strategy in (Strategy.NOPROXY,) + PROXY_STRATEGIES
    )
    assert spent < FAIRNESS_BUDGET_S


def test_criterion_05_rebuffering():
    every_preset = ("1-A", "1-B", "1-C", "2-A", "2-B", "table2", "table3")
    for name in every_preset:
        for strategy in (Strategy.PROACTIVE, Strategy.FAURAS):
            for result in matrix(name, strategy):
                assert result.report.rebuffer_count == 0
    assert sum(r.report.rebuffer_count for r in matrix("2-B", Strategy.REACTIVE)) >= 1
    assert sum(r.report.rebuffer_count for r in matrix("1-C", Strategy.NOPROXY)) >= 1


def test_criterion_06_adaptation_ordering():
    for name in ("2-A", "2-B"):
        for seed_pos in range(len(SEEDS)):
            delay = {
                s: matrix(name, s)[seed_pos].report.adaptation_delay_s["a1"]
                for s in PROXY_STRATEGIES
            }
            amplitude = {
                s: matrix(name, s)[seed_pos].report.degradation_amplitude_kbps["a1"]
                for s in PROXY_STRATEGIES
            }
            assert delay[Strategy.PROACTIVE] < delay[Strategy.FAURAS] <= delay[Strategy.REACTIVE]
            assert (
                amplitude[Strategy.REACTIVE]
                <= amplitude[Strategy.FAURAS]
                < amplitude[Strategy.PROACTIVE]
            )


def test_criterion_07_bitrate_cost_of_blind_rewrites():
    for name in ("2-A", "2-B"):
        for seed_pos in range(len(SEEDS)):
            averages = {
                s: matrix(name, s)[seed_pos].report.avg_bitrate_kbps["a1"]
                for s in PROXY_STRATEGIES
            }
            blind = averages[Strategy.PROACTIVE]
            assert blind < averages[Strategy.REACTIVE]
            assert blind < averages[Strategy.FAURAS]


def test_criterion_08_slice_staircase_adaptation():
    ladder = preset("table2").build_ladder()
    settled_kbps = fair_bitrate(ladder, 1000.0)
    for result in matrix("table2", Strategy.REACTIVE):
        log = result.log
        scheduled = [
            e for e in log.of_kind(ev.SLICE_UPDATE, "a1") if e.extra.endswith(";scheduled")
        ]
        raise_t = [e.time_s for e in scheduled if e.extra.startswith("slice=3000.0")][0]
        drop_t = [
            e.time_s
            for e in scheduled
            if e.extra.startswith("slice=1000.0") and e.time_s > raise_t
        ][0]
        decisions = decision_series(log, "a1")
        low_period = [kbps for t, kbps in decisions if t < raise_t]
        high_period = [kbps for t, kbps in decisions if raise_t <= t < drop_t]
        after_drop = [kbps for t, kbps in decisions if t >= drop_t]
        assert max(high_period) > max(low_period)
        landed = next(i for i, kbps in enumerate(after_drop) if kbps <= settled_kbps)
        # allocation-only shaping takes several decisions to walk back down
        assert landed >= 2
        descent = after_drop[: landed + 1]
        assert all(a > b for a, b in zip(descent, descent[1:]))


def test_criterion_09_deterministic_logs(tmp_path):
    logs = []
    for i in (1, 2):
        out = tmp_path / f"p{i}"
        cmd = [
            sys.executable, "-m", "fairpush.cli", "run",
            "--scenario", "2-B", "--strategy", Strategy.FAURAS,
            "--seed", "3", "--reps", "1", "--out", str(out),
        ]
        proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        logs.append((out / "2-B-fauras-seed3" / "events.csv").read_bytes())
    assert logs[0] == logs[1]
    assert len(logs[0]) > 10_000


def test_criterion_10_invariant_suite():
    cmd = [
        sys.executable, "-m", "pytest",
        str(ROOT / "tests" / "test_properties.py"),
        "-q", "-p", "no:cacheprovider",
    ]
    started = time.perf_counter()
    proc = subprocess.run(cmd, cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - started
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert elapsed < PROPERTY_BUDGET_S
