"""Run driver: wires clients, proxy, origin and link into one event loop.

Payload delivery is sequential per client: one connection, one transfer at a
time, served in FIFO order.  A response bundle arrives one round trip after
the request; the lead payload transfers first, then each promised payload.
Pushed payloads transfer to completion even when the client is going to
discard them, so a re-request always queues behind the waste it replaces.

Sliced links give each client exactly its pinned rate.  A shared link is
weighted processor sharing with a connection ramp: a streak of back-to-back
payloads doubles its weight per payload up to an equal share, and an idle
pause sends it back to the lowest weight.  Clients that pause on a full
buffer therefore restart weak against clients that kept transferring, which
is the asymmetry behind bandwidth overestimation on the unmanaged link.

Three provisional event families (transfer completions, playback boundaries,
room waits) are rescheduled with generation counters; stale entries are
dropped when popped.  Everything observable lands in the EventLog.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from fairpush import events as ev
from fairpush.client import (
    ACT_AWAIT_CACHE,
    ACT_CONSUME,
    ACT_DISCARD,
    ACT_FINISHED,
    ACT_REQUEST,
    ACT_WAIT,
    BUFFER_LEVEL_HEADER,
    IDLE,
    OVERWRITE_NOTICE_HEADER,
    ClientAgent,
    format_buffer_level,
)
from fairpush.engine import (
    KBIT_EPS,
    SHARED,
    SLICED,
    TIME_EPS,
    EventQueue,
    Flow,
    LinkModel,
    client_rng,
)
from fairpush.errors import SimulationError
from fairpush.events import EventLog
from fairpush.media import SegmentRef
from fairpush.proxy import ProxyState, Strategy
from fairpush.server import PushPolicy, serve_request

# On a shared link a transfer streak climbs from 1/2**_RAMP_STAGES of its
# weight to full weight, one doubling per payload; an idle gap longer than
# two round trips drops it back to the bottom.
_RAMP_STAGES = 3

# internal queue event kinds
_JOIN = "join"
_BUNDLE = "bundle"
_FLOW_DONE = "flow_done"
_PLAY_BOUNDARY = "play_boundary"
_WAKE = "wake"
_SLICE = "slice"

LEAD = "lead"
PUSH = "push"


@dataclass
class _Job:
    client_id: str
    kind: str
    index: int
    bitrate_kbps: int
    size_kbit: float
    headers: dict[str, str] = field(default_factory=dict)
    condemned: bool = False
    started_at_s: float = 0.0


class Session:
    """One seeded simulation run of a scenario."""

    def __init__(self, config, seed: int) -> None:
        self.config = config
        self.seed = seed
        self.ladder = config.build_ladder()
        self.policy = PushPolicy(config.push_k)
        mode = SHARED if config.strategy == Strategy.NOPROXY else SLICED
        self.link = LinkModel(
            capacity_kbps=config.capacity_kbps,
            mode=mode,
            base_rtt_s=config.base_rtt_s,
        )
        self.proxy = ProxyState(
            ladder=self.ladder,
            capacity_kbps=config.capacity_kbps,
            strategy=config.strategy,
            push_k=config.push_k,
            buffer_max_s=config.buffer_max_s,
            rewrite_all_to_kbps=config.rewrite_all_to_kbps,
        )
        self.queue = EventQueue()
        self.log = EventLog()
        self.order: list[str] = []
        self.agents: dict[str, ClientAgent] = {}
        self.active: dict[str, Flow | None] = {}
        self.jobs: dict[str, deque] = {}
        self.downloaded: dict[str, int] = {}
        self.flow_gen = 0
        self.flow_sched: tuple[float, str] | None = None
        self.play_gen: dict[str, int] = {}
        self.play_sched: dict[str, float | None] = {}
        self.wake_gen: dict[str, int] = {}
        self.ramp_stage: dict[str, int] = {}
        self.last_done_s: dict[str, float | None] = {}
        self.last_sync_s = 0.0
        for spec in config.clients:
            agent = ClientAgent(
                client_id=spec.client_id,
                ladder=self.ladder,
                push_k=config.push_k,
                rng=client_rng(seed, spec.client_id),
                buffer_max_s=config.buffer_max_s,
                startup_s=config.abr.startup_s,
                resume_s=config.abr.resume_s,
                abr_mode=config.abr.mode,
            )
            agent.abr.window = config.abr.window
            agent.abr.safety = config.abr.safety
            agent.abr.up_hold = config.abr.up_hold
            self.order.append(spec.client_id)
            self.agents[spec.client_id] = agent
            self.active[spec.client_id] = None
            self.jobs[spec.client_id] = deque()
            self.downloaded[spec.client_id] = 0
            self.play_gen[spec.client_id] = 0
            self.play_sched[spec.client_id] = None
            self.wake_gen[spec.client_id] = 0
            self.ramp_stage[spec.client_id] = 0
            self.last_done_s[spec.client_id] = None
        self.pending_joins = [s for s in config.clients if s.join_after_client is not None]
        for spec in config.clients:
            if spec.join_after_client is None:
                self.queue.schedule(spec.join_at_s, _JOIN, spec.client_id)
        self.pending_slices = [e for e in config.bandwidth_schedule if e.after_segments is not None]
        for entry in config.bandwidth_schedule:
            if entry.after_segments is None:
                self.queue.schedule(entry.at_s, _SLICE, entry)

    # ---- main loop ----

    def run(self) -> EventLog:
        handlers = {
            _JOIN: self._on_join,
            _BUNDLE: self._on_bundle,
            _FLOW_DONE: self._on_flow_done,
            _PLAY_BOUNDARY: self._on_play_boundary,
            _WAKE: self._on_wake,
            _SLICE: self._on_slice,
        }
        while True:
            entry = self.queue.next_event()
            if entry is None:
                break
            self._sync_to(entry.time_s)
            handlers[entry.kind](entry.data)
            self._refresh_flow_completion()
            self._refresh_play_boundaries()
        for client_id in self.order:
            agent = self.agents[client_id]
            if not (agent.downloads_done and agent.playback_done):
                raise SimulationError(f"run ended with client {client_id} unfinished")
        return self.log

    @property
    def now_s(self) -> float:
        return self.queue.now_s

    def _log(self, client_id: str, kind: str, **kw) -> None:
        self.log.append(self.now_s, client_id, kind, **kw)

    # ---- continuous progression ----

    def _ramp_weight(self, client_id: str) -> float:
        return 1.0 / (1 << (_RAMP_STAGES - self.ramp_stage[client_id]))

    def _rate_of(self, client_id: str) -> float:
        if self.link.mode == SHARED:
            total = 0.0
            for cid in self.order:
                if self.active[cid] is not None:
                    total += self._ramp_weight(cid)
            return self.link.capacity_kbps * self._ramp_weight(client_id) / total
        return self.link.slice_of(client_id)

    def _sync_to(self, t: float) -> None:
        dt = t - self.last_sync_s
        if dt < 0:
            raise SimulationError(f"sync backwards by {dt}")
        if dt > 0:
            for cid in self.order:
                flow = self.active[cid]
                if flow is not None:
                    flow.remaining_kbit -= self._rate_of(cid) * dt
                    if flow.remaining_kbit < -1e-3:
                        raise SimulationError("flow overshot its completion instant")
                    flow.remaining_kbit = max(flow.remaining_kbit, 0.0)
                self.agents[cid].playback_tick(dt)
        self.last_sync_s = t

    def _refresh_flow_completion(self) -> None:
        """(Re)schedule the earliest transfer completion, if it moved."""
        best_t = None
        best_cid = None
        for cid in self.order:
            flow = self.active[cid]
            if flow is None:
                continue
            t_done = self.now_s + flow.remaining_kbit / self._rate_of(cid)
            if best_t is None or t_done < best_t:
                best_t = t_done
                best_cid = cid
        if best_cid is None:
            self.flow_gen += 1
            self.flow_sched = None
            return
        if self.flow_sched is not None:
            sched_t, sched_cid = self.flow_sched
            if sched_cid == best_cid and abs(sched_t - best_t) <= TIME_EPS:
                return
        self.flow_gen += 1
        self.flow_sched = (best_t, best_cid)
        self.queue.schedule(best_t, _FLOW_DONE, (best_cid, self.flow_gen))

    def _refresh_play_boundaries(self) -> None:
        for cid in self.order:
            boundary = self.agents[cid].buffer.next_boundary_s()
            if boundary is None:
                if self.play_sched[cid] is not None:
                    self.play_gen[cid] += 1
                    self.play_sched[cid] = None
                continue
            target = self.now_s + boundary
            sched = self.play_sched[cid]
            if sched is not None and abs(sched - target) <= TIME_EPS:
                continue
            self.play_gen[cid] += 1
            self.play_sched[cid] = target
            self.queue.schedule(target, _PLAY_BOUNDARY, (cid, self.play_gen[cid]))

    # ---- handlers ----

    def _on_join(self, client_id: str) -> None:
        agent = self.agents[client_id]
        self._log(client_id, ev.CLIENT_JOIN, buffer_s=agent.buffer.level_s)
        changed = self.proxy.join(client_id)
        self._apply_slices(changed)
        self._fetch_loop(client_id)

    def _on_slice(self, entry) -> None:
        self.proxy.pin_slice(entry.client_id, entry.slice_kbps)
        self.link.set_slice(entry.client_id, entry.slice_kbps)
        self._log(
            entry.client_id,
            ev.SLICE_UPDATE,
            extra=f"slice={entry.slice_kbps!r};scheduled",
        )

    def _apply_slices(self, changed: dict[str, float]) -> None:
        for cid, kbps in changed.items():
            self.link.set_slice(cid, kbps)
            self._log(cid, ev.SLICE_UPDATE, extra=f"slice={kbps!r}")

    def _on_wake(self, data) -> None:
        client_id, gen = data
        if gen != self.wake_gen[client_id]:
            return
        self.agents[client_id].wake()
        self._fetch_loop(client_id)

    def _on_play_boundary(self, data) -> None:
        client_id, gen = data
        if gen != self.play_gen[client_id]:
            return
        self.play_sched[client_id] = None
        agent = self.agents[client_id]
        ref, transition = agent.on_play_boundary()
        self._log(
            client_id,
            ev.SEGMENT_PLAYED,
            segment_index=ref.index,
            bitrate_kbps=ref.bitrate_kbps,
            buffer_s=agent.buffer.level_s,
        )
        if transition == "stall":
            self._log(client_id, ev.PLAYBACK_STALL, buffer_s=0.0)

    # ---- fetch machinery ----

    def _fetch_loop(self, client_id: str) -> None:
        agent = self.agents[client_id]
        while agent.state == IDLE:
            action = agent.plan_fetch(self.now_s)
            if action.kind == ACT_CONSUME:
                transitions = agent.consume(action.index)
                self._log_transitions(client_id, transitions)
            elif action.kind == ACT_DISCARD:
                self._log(
                    client_id,
                    ev.PUSH_DISCARDED,
                    segment_index=action.index,
                    bitrate_kbps=action.bitrate_kbps,
                    buffer_s=agent.buffer.level_s,
                    extra="mismatch",
                )
                agent.cache.remove(action.index)
            elif action.kind == ACT_REQUEST:
                self._send_request(client_id, action.index, action.bitrate_kbps)
            elif action.kind == ACT_WAIT:
                self.wake_gen[client_id] += 1
                self.queue.schedule(action.wake_at_s, _WAKE, (client_id, self.wake_gen[client_id]))
            elif action.kind == ACT_AWAIT_CACHE:
                pass
            elif action.kind == ACT_FINISHED:
                self._on_downloads_finished(client_id)

    def _log_transitions(self, client_id: str, transitions: list[str]) -> None:
        agent = self.agents[client_id]
        for kind in transitions:
            self._log(client_id, kind, buffer_s=agent.buffer.level_s)

    def _condemn(self, client_id: str, index: int) -> None:
        """Mark the in-flight or queued push for a discarded segment as wasted."""
        flow = self.active[client_id]
        if flow is not None and flow.payload.kind == PUSH and flow.payload.index == index:
            flow.payload.condemned = True
            return
        for job in self.jobs[client_id]:
            if job.kind == PUSH and job.index == index:
                job.condemned = True
                return
        raise SimulationError(f"no pending push found for discarded segment {index}")

    def _send_request(self, client_id: str, index: int, decision_kbps: int) -> None:
        agent = self.agents[client_id]
        level = agent.buffer.level_s
        self._log(
            client_id,
            ev.REQUEST_SENT,
            segment_index=index,
            bitrate_kbps=decision_kbps,
            buffer_s=level,
        )
        headers = {BUFFER_LEVEL_HEADER: format_buffer_level(level)}
        decision = self.proxy.process_request(client_id, SegmentRef(index, decision_kbps), headers)
        if decision.triggered:
            self._log(
                client_id,
                ev.REQUEST_REWRITTEN,
                segment_index=index,
                bitrate_kbps=decision.final_kbps,
                extra=f"from={decision.original_kbps}",
            )
        response_headers = {}
        if decision.notify:
            response_headers[OVERWRITE_NOTICE_HEADER] = str(decision.final_kbps)
        response = serve_request(
            self.ladder, self.policy, SegmentRef(index, decision.final_kbps), response_headers
        )
        bundle = [
            _Job(
                client_id,
                LEAD,
                response.lead.ref.index,
                response.lead.ref.bitrate_kbps,
                response.lead.size_kbit,
                headers=response.headers,
            )
        ]
        for promised in response.promises:
            bundle.append(
                _Job(
                    client_id,
                    PUSH,
                    promised.ref.index,
                    promised.ref.bitrate_kbps,
                    promised.size_kbit,
                )
            )
        self.queue.schedule(self.now_s + self.link.base_rtt_s, _BUNDLE, (client_id, bundle))

    def _on_bundle(self, data) -> None:
        client_id, bundle = data
        agent = self.agents[client_id]
        for job in bundle[1:]:
            stale = agent.cache.get(job.index)
            if stale is not None:
                # A promise from a broken cycle is still occupying the slot.
                self._log(
                    client_id,
                    ev.PUSH_DISCARDED,
                    segment_index=job.index,
                    bitrate_kbps=stale.bitrate_kbps,
                    buffer_s=agent.buffer.level_s,
                    extra="superseded",
                )
                agent.cache.remove(job.index)
                if not stale.complete:
                    self._condemn(client_id, job.index)
            self._log(
                client_id,
                ev.PUSH_PROMISE_RECEIVED,
                segment_index=job.index,
                bitrate_kbps=job.bitrate_kbps,
                buffer_s=agent.buffer.level_s,
            )
            agent.cache.announce(job.index, job.bitrate_kbps)
        self.jobs[client_id].extend(bundle)
        self._start_next_job(client_id)

    def _start_next_job(self, client_id: str) -> None:
        if self.active[client_id] is not None or not self.jobs[client_id]:
            return
        job = self.jobs[client_id].popleft()
        job.started_at_s = self.now_s
        last = self.last_done_s[client_id]
        if last is None or self.now_s - last > 2 * self.link.base_rtt_s + TIME_EPS:
            self.ramp_stage[client_id] = 0
        else:
            self.ramp_stage[client_id] = min(self.ramp_stage[client_id] + 1, _RAMP_STAGES)
        self.active[client_id] = Flow(client_id, job.size_kbit, payload=job)
        if job.kind == LEAD:
            self._log(
                client_id,
                ev.RESPONSE_STARTED,
                segment_index=job.index,
                bitrate_kbps=job.bitrate_kbps,
            )

    def _on_flow_done(self, data) -> None:
        client_id, gen = data
        if gen != self.flow_gen:
            return
        self.flow_sched = None
        flow = self.active[client_id]
        if flow is None or flow.remaining_kbit > KBIT_EPS:
            raise SimulationError("flow completion fired on an unfinished flow")
        self.active[client_id] = None
        self.last_done_s[client_id] = self.now_s
        job = flow.payload
        agent = self.agents[client_id]
        agent.observe_transfer(job.size_kbit, self.now_s - job.started_at_s)
        if job.condemned:
            # The cache slot was already cleared when this push was discarded.
            self._start_next_job(client_id)
            return
        if job.kind == LEAD:
            transitions = agent.on_lead_response(
                SegmentRef(job.index, job.bitrate_kbps), job.headers
            )
            self._log(
                client_id,
                ev.RESPONSE_DONE,
                segment_index=job.index,
                bitrate_kbps=job.bitrate_kbps,
                buffer_s=agent.buffer.level_s,
            )
            self._log_transitions(client_id, transitions)
            self._record_download(client_id, job.index)
            self._fetch_loop(client_id)
        else:
            agent.on_push_complete(job.index)
            self._log(
                client_id,
                ev.PUSH_PAYLOAD_DONE,
                segment_index=job.index,
                bitrate_kbps=job.bitrate_kbps,
                buffer_s=agent.buffer.level_s,
            )
            self._record_download(client_id, job.index)
            if agent.cache_ready(job.index):
                self._fetch_loop(client_id)
        self._start_next_job(client_id)

    def _record_download(self, client_id: str, index: int) -> None:
        if index > self.downloaded[client_id]:
            self.downloaded[client_id] = index
        self._check_triggers(client_id)

    def _check_triggers(self, client_id: str) -> None:
        watermark = self.downloaded[client_id]
        fired = [
            s
            for s in self.pending_joins
            if s.join_after_client == client_id and watermark >= s.join_after_segments
        ]
        for spec in fired:
            self.pending_joins.remove(spec)
            self.queue.schedule(self.now_s, _JOIN, spec.client_id)
        due = [
            e
            for e in self.pending_slices
            if e.trigger_client == client_id and watermark >= e.after_segments
        ]
        for entry in due:
            self.pending_slices.remove(entry)
            self.queue.schedule(self.now_s, _SLICE, entry)

    def _on_downloads_finished(self, client_id: str) -> None:
        agent = self.agents[client_id]
        self._log(client_id, ev.CLIENT_LEAVE, buffer_s=agent.buffer.level_s)
        changed = self.proxy.leave(client_id)
        self.link.clear_slice(client_id)
        self._apply_slices(changed)


def run_session(config, seed: int) -> EventLog:
    """Simulate one scenario with one seed and return its event log."""
    return Session(config, seed).run()
