"""Deterministic discrete-event simulation of an HPC cluster backend.

Implements the dispatcher's backend contract against virtual time in
integer minutes: sampled scheduler queue waits, step execution that
respects the packing-derived dependency graph, step and bundle kill
rules with a grace period, fault injection, and accounting-file plus
sentinel-file artifact generation.  Identical (seed, config, workload)
inputs replay to byte-identical event logs.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from pathlib import Path

from .bundling import Bundle, BundlePolicy, ExecutionSite, SiteRegistry
from .dispatcher import (
    ACCT_CANCELLED,
    ACCT_COMPLETED,
    ACCT_FAILED,
    ACCT_TIMEOUT,
    EVENT_ACCEPTED,
    EVENT_FINISHED,
    EVENT_QUEUED,
    EVENT_RUNNING,
    AccountingRecord,
    BackendRejection,
    BundleArtifacts,
    BundleMaterials,
    CollectingSink,
    Dispatcher,
    JobSpec,
    MAKEFILE_FILENAME,
)
from .stepgraph import StepGraph

# Fault kinds.
STEP_OVERRUN = "STEP_OVERRUN"
NODE_FAULT = "NODE_FAULT"
GLOBAL_STALL = "GLOBAL_STALL"

# Event kinds.  BUNDLE_START through NOTIFY model cluster activity; the
# rest are loop plumbing (job arrivals, dispatcher timer ticks).
EV_ARRIVAL = "ARRIVAL"
EV_TICK = "TICK"
EV_BUNDLE_START = "BUNDLE_START"
EV_STEP_START = "STEP_START"
EV_STEP_END = "STEP_END"
EV_BUNDLE_END = "BUNDLE_END"
EV_NOTIFY = "NOTIFY"

TIMEOUT_EXIT_CODE = 124
CANCEL_EXIT_CODE = 143


def derive_rng(seed: int, label: str) -> random.Random:
    """A named random stream, stable across runs and interpreter hashing."""
    digest = hashlib.sha512(f"{seed}:{label}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class QueueWait:
    """Scheduler queue-wait model for one site: fixed or uniform minutes."""

    kind: str = "fixed"
    low: int = 0
    high: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "uniform"):
            raise ValueError(f"unknown queue-wait kind {self.kind!r}")
        if self.low < 0 or (self.kind == "uniform" and self.high < self.low):
            raise ValueError("queue-wait bounds must satisfy 0 <= low <= high")

    def sample(self, rng: random.Random) -> int:
        if self.kind == "fixed":
            return self.low
        return rng.randint(self.low, self.high)


@dataclass(frozen=True)
class FaultSpec:
    """One injected fault.

    STEP_OVERRUN multiplies a job's true runtime; NODE_FAULT suppresses a
    job's sentinel for its next ``times`` conclusions; GLOBAL_STALL
    freezes a site and suppresses its notifications over ``window``.
    """

    kind: str
    target: str
    multiplier: int = 1
    times: int = 1
    window: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.kind not in (STEP_OVERRUN, NODE_FAULT, GLOBAL_STALL):
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.kind == STEP_OVERRUN and self.multiplier < 1:
            raise ValueError("STEP_OVERRUN multiplier must be >= 1")
        if self.kind == NODE_FAULT and self.times < 1:
            raise ValueError("NODE_FAULT times must be >= 1")
        if self.kind == GLOBAL_STALL and not 0 <= self.window[0] < self.window[1]:
            raise ValueError("GLOBAL_STALL window must satisfy 0 <= start < end")


@dataclass(frozen=True)
class SimConfig:
    """Knobs for one simulation run; the seed drives every sample."""

    seed: int = 0
    grace_minutes: int = 5
    tick_minutes: int = 10
    horizon_minutes: int = 1_000_000
    queue_waits: dict[str, QueueWait] = field(default_factory=dict)
    default_wait: QueueWait = QueueWait("fixed", 0)
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self) -> None:
        if self.grace_minutes < 0:
            raise ValueError("grace_minutes must be >= 0")
        if self.tick_minutes < 1 or self.horizon_minutes < 1:
            raise ValueError("tick and horizon must be positive")

    def wait_for(self, site_id: str) -> QueueWait:
        return self.queue_waits.get(site_id, self.default_wait)


@dataclass(frozen=True)
class StepSchedule:
    """Computed execution window for one step inside a bundle."""

    start: int  # absolute virtual minute
    end: int
    duration: int  # nominal compute minutes, stall gaps excluded
    timed_out: bool


def schedule_steps(
    graph: StepGraph,
    durations: dict[str, int],
    start_minute: int = 0,
) -> dict[str, tuple[int, int]]:
    """Start and end minute for every step, in nominal (progress) time.

    A step starts when all its reduced-graph prerequisites have ended;
    roots start at ``start_minute``.  Durations are taken as given, so
    callers apply kill rules before calling.
    """
    times: dict[str, tuple[int, int]] = {}

    def end_of(node: str) -> int:
        if node not in times:
            preds = graph.predecessors(node)
            start = max((end_of(p) for p in preds), default=start_minute)
            times[node] = (start, start + durations[node])
        return times[node][1]

    for node in graph.nodes:
        end_of(node)
    return times


class _BundleRun:
    """Mutable per-submission state inside the simulator."""

    def __init__(self, handle: str, bundle: Bundle, materials: BundleMaterials,
                 submitted_at: int, wait: int):
        self.handle = handle
        self.bundle = bundle
        self.materials = materials
        self.site_id = bundle.site_id
        self.submitted_at = submitted_at
        self.wait = wait
        self.started_at: int | None = None
        self.finalized_at: int | None = None
        self.schedule: dict[str, StepSchedule] = {}
        self.rows: dict[str, tuple[str, int, int]] = {}
        self.sentinels: dict[str, bool] = {}
        self.outputs: dict[str, str] = {}
        self.artifacts: BundleArtifacts | None = None

    @property
    def finalized(self) -> bool:
        return self.finalized_at is not None


class SimCluster:
    """Backend implementation: submissions become scheduled virtual events."""

    def __init__(self, sim: "Simulation", config: SimConfig):
        self.sim = sim
        self.config = config
        self.runs: dict[str, _BundleRun] = {}
        self._handle_seq = 0
        self._wait_rngs: dict[str, random.Random] = {}
        self._overrun: dict[str, int] = {}
        self._sentinel_suppression: dict[str, int] = {}
        self.stall_windows: dict[str, list[tuple[int, int]]] = {}
        for fault in config.faults:
            if fault.kind == STEP_OVERRUN:
                self._overrun[fault.target] = fault.multiplier
            elif fault.kind == NODE_FAULT:
                self._sentinel_suppression[fault.target] = fault.times
            else:
                self.stall_windows.setdefault(fault.target, []).append(fault.window)
        for windows in self.stall_windows.values():
            windows.sort()
            for (_, e0), (s1, _) in zip(windows, windows[1:]):
                if s1 < e0:
                    raise ValueError("GLOBAL_STALL windows on one site must not overlap")

    # -- virtual-time arithmetic under site freezes ----------------------

    def advance(self, site_id: str, now: int, delta: int) -> int:
        """Absolute minute at which ``delta`` minutes of site progress
        starting at ``now`` complete, skipping frozen stall windows.

        Progress that completes exactly at a window's opening instant
        counts as done; anything needing more waits out the window.
        """
        cur = now
        remaining = delta
        for start, end in self.stall_windows.get(site_id, ()):
            if end <= cur:
                continue
            if cur < start:
                step = min(remaining, start - cur)
                cur += step
                remaining -= step
                if remaining == 0:
                    return cur
            if cur >= start:
                cur = end
        return cur + remaining

    def progress(self, site_id: str, start: int, now: int) -> int:
        """Compute minutes actually elapsed on a site between two instants."""
        total = now - start
        for s, e in self.stall_windows.get(site_id, ()):
            total -= max(0, min(now, e) - max(start, s))
        return max(0, total)

    def suppressed(self, site_id: str, at: int) -> bool:
        return any(s <= at < e for s, e in self.stall_windows.get(site_id, ()))

    def _wait_rng(self, site_id: str) -> random.Random:
        if site_id not in self._wait_rngs:
            self._wait_rngs[site_id] = derive_rng(self.config.seed, f"wait:{site_id}")
        return self._wait_rngs[site_id]

    # -- backend contract ------------------------------------------------

    def submit(self, bundle: Bundle, materials: BundleMaterials) -> str:
        now = self.sim.now
        site = self.sim.registry.site(bundle.site_id)
        if (bundle.request_cores > site.cores_per_node
                or bundle.request_minutes > site.max_walltime_minutes):
            raise BackendRejection(
                f"request {bundle.request_cores}c x {bundle.request_minutes}m "
                f"exceeds site {site.site_id}"
            )
        self._handle_seq += 1
        handle = f"sim-{self._handle_seq:05d}"
        wait = self.config.wait_for(site.site_id).sample(self._wait_rng(site.site_id))
        run = _BundleRun(handle, bundle, materials, now, wait)
        self.runs[handle] = run
        self.sim.push_notify(now, handle, EVENT_ACCEPTED)
        self.sim.push_notify(now, handle, EVENT_QUEUED)
        self.sim.push(self.advance(site.site_id, now, wait), EV_BUNDLE_START, handle)
        return handle

    def cancel(self, handle: str) -> BundleArtifacts | None:
        run = self.runs.get(handle)
        if run is None:
            return None
        if not run.finalized:
            self._finalize(run, self.sim.now, killed=True, notify=False)
        return run.artifacts

    # -- event handlers --------------------------------------------------

    def on_bundle_start(self, handle: str, now: int) -> None:
        run = self.runs[handle]
        run.started_at = now
        self.sim.record(now, EV_BUNDLE_START,
                        f"{run.bundle.bundle_id} on {run.site_id} after {run.wait}m queue wait")
        self.sim.push_notify(now, handle, EVENT_RUNNING)
        grace = self.config.grace_minutes
        durations: dict[str, int] = {}
        timed_out: dict[str, bool] = {}
        for job_id, _ in run.bundle.members:
            allotment = run.materials.allotments[job_id]
            true = self.sim.true_runtime(job_id) * self._overrun.get(job_id, 1)
            timed_out[job_id] = true > allotment + grace
            durations[job_id] = min(true, allotment + grace)
        nominal = schedule_steps(run.materials.graph, durations)
        site = run.site_id
        for job_id, (rel_start, rel_end) in nominal.items():
            sched = StepSchedule(
                start=self.advance(site, now, rel_start),
                end=self.advance(site, now, rel_end),
                duration=durations[job_id],
                timed_out=timed_out[job_id],
            )
            run.schedule[job_id] = sched
            self.sim.push(sched.start, EV_STEP_START, (handle, job_id))
            self.sim.push(sched.end, EV_STEP_END, (handle, job_id))
        kill_at = self.advance(site, now, run.bundle.request_minutes + grace)
        self.sim.push(kill_at, EV_BUNDLE_END, handle)

    def on_step_start(self, handle: str, job_id: str, now: int) -> None:
        run = self.runs[handle]
        if run.finalized:
            return
        self.sim.record(now, EV_STEP_START, f"{run.bundle.bundle_id}/{job_id}")

    def on_step_end(self, handle: str, job_id: str, now: int) -> None:
        run = self.runs[handle]
        if run.finalized or job_id in run.rows:
            return
        self._conclude_step(run, job_id, now)
        if len(run.rows) == len(run.bundle.members):
            self._finalize(run, now, killed=False, notify=True)

    def on_bundle_end(self, handle: str, now: int) -> None:
        run = self.runs[handle]
        if run.finalized:
            return
        self._finalize(run, now, killed=True, notify=True)

    # -- outcome recording ----------------------------------------------

    def _conclude_step(self, run: _BundleRun, job_id: str, now: int) -> None:
        sched = run.schedule[job_id]
        if sched.timed_out:
            word, code = ACCT_TIMEOUT, TIMEOUT_EXIT_CODE
            sentinel = False
        elif self._sentinel_suppression.get(job_id, 0) > 0:
            self._sentinel_suppression[job_id] -= 1
            word, code = ACCT_FAILED, 1
            sentinel = False
        else:
            word, code = ACCT_COMPLETED, 0
            sentinel = True
        run.rows[job_id] = (word, sched.duration, code)
        run.sentinels[job_id] = sentinel
        run.outputs[job_id] = f"{job_id}: {word} after {sched.duration} minutes\n"
        self.sim.record(now, EV_STEP_END,
                        f"{run.bundle.bundle_id}/{job_id} {word} elapsed {sched.duration}")

    def _finalize(self, run: _BundleRun, now: int, killed: bool, notify: bool) -> None:
        for job_id, _ in run.bundle.members:
            if job_id in run.rows:
                continue
            sched = run.schedule.get(job_id)
            if sched is not None and sched.end == now:
                # The step concludes at the very instant the bundle dies;
                # its own verdict stands.
                self._conclude_step(run, job_id, now)
                continue
            if sched is None or sched.start >= now:
                elapsed = 0
            else:
                elapsed = self.progress(run.site_id, sched.start, now)
            run.rows[job_id] = (ACCT_CANCELLED, elapsed, CANCEL_EXIT_CODE)
            run.sentinels[job_id] = False
            self.sim.record(now, EV_STEP_END,
                            f"{run.bundle.bundle_id}/{job_id} {ACCT_CANCELLED} elapsed {elapsed}")
        run.finalized_at = now
        accounting = AccountingRecord(
            bundle_id=run.bundle.bundle_id,
            rows={job_id: run.rows[job_id] for job_id, _ in run.bundle.members},
        )
        run.artifacts = BundleArtifacts(
            accounting_text=accounting.to_text(),
            sentinels=dict(run.sentinels),
            outputs=dict(run.outputs),
        )
        self.sim.record(now, EV_BUNDLE_END,
                        f"{run.bundle.bundle_id} {'killed' if killed else 'complete'}")
        self.sim.materialize(run)
        if notify:
            self.sim.push_notify(now, run.handle, EVENT_FINISHED)


@dataclass
class SimReport:
    """Outcome of one simulation run, with live references for inspection."""

    final_minute: int
    horizon_exhausted: bool
    live_at_end: int
    log: list[str]
    dispatcher: Dispatcher
    sink: CollectingSink
    backend: SimCluster

    @property
    def event_log_text(self) -> str:
        return "\n".join(self.log) + "\n"


class Simulation:
    """Single-threaded event loop tying dispatcher and simulated cluster.

    Virtual time advances through a heap of (minute, sequence) keyed
    events; ties resolve by insertion order, so a run is a pure function
    of its inputs.
    """

    def __init__(
        self,
        sites: list[ExecutionSite],
        workload: list[JobSpec],
        policy: BundlePolicy,
        config: SimConfig,
        out_dir: str | Path | None = None,
        retry_cap: int = 10,
    ):
        self.config = config
        self.workload = list(workload)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.now = 0
        self.log: list[str] = []
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._true: dict[str, int] = {}
        seen_sites = {s.site_id for s in sites}
        for spec in self.workload:
            self._true[spec.job_id] = max(1, spec.true_runtime_minutes)
        for fault in config.faults:
            known = seen_sites if fault.kind == GLOBAL_STALL else self._true.keys()
            if fault.target not in known:
                raise ValueError(f"fault target {fault.target!r} does not exist")
        self.registry = SiteRegistry(sites, policy, derive_rng(config.seed, "bind"))
        self.sink = CollectingSink()
        self.backend = SimCluster(self, config)
        self.dispatcher = Dispatcher(
            self.registry, self.backend, self.sink,
            retry_cap=retry_cap, recorder=self.record,
        )

    # -- event queue -----------------------------------------------------

    def push(self, time: int, kind: str, payload: object) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, payload))

    def push_notify(self, time: int, handle: str, event_kind: str) -> None:
        self.push(time, EV_NOTIFY, (handle, event_kind))

    def record(self, now: int, kind: str, detail: str) -> None:
        self.log.append(f"{now:>8} {kind:<14} {detail}")

    def true_runtime(self, job_id: str) -> int:
        return self._true[job_id]

    # -- artifact materialization ---------------------------------------

    def materialize(self, run: _BundleRun) -> None:
        if self.out_dir is None or run.artifacts is None:
            return
        bundle_dir = self.out_dir / run.bundle.bundle_id
        run.artifacts.write_to(bundle_dir)
        (bundle_dir / MAKEFILE_FILENAME).write_text(run.materials.make_text)

    # -- main loop -------------------------------------------------------

    def run(self) -> SimReport:
        for spec in sorted(self.workload, key=lambda s: (s.arrival_minute, s.job_id)):
            self.push(spec.arrival_minute, EV_ARRIVAL, spec)
        self._arrivals_remaining = len(self.workload)
        self.push(self.config.tick_minutes, EV_TICK, None)
        horizon_exhausted = False
        while self._heap:
            time, _, kind, payload = heapq.heappop(self._heap)
            if time > self.config.horizon_minutes:
                horizon_exhausted = True
                break
            self.now = time
            self._handle(kind, payload)
            if self._arrivals_remaining == 0 and self.dispatcher.all_terminal():
                break
        live = self.dispatcher.live_count() + self._arrivals_remaining
        if horizon_exhausted and live:
            self.record(self.now, "HORIZON",
                        f"stopped at {self.config.horizon_minutes} with {live} live jobs")
        return SimReport(
            final_minute=self.now,
            horizon_exhausted=horizon_exhausted,
            live_at_end=live,
            log=self.log,
            dispatcher=self.dispatcher,
            sink=self.sink,
            backend=self.backend,
        )

    def _handle(self, kind: str, payload: object) -> None:
        if kind == EV_ARRIVAL:
            self._arrivals_remaining -= 1
            self.record(self.now, EV_ARRIVAL, payload.job_id)
            self.dispatcher.ingest(payload, self.now)
        elif kind == EV_TICK:
            self.dispatcher.monitor(self.now)
            self.dispatcher.flush(self.now)
            if self._arrivals_remaining or not self.dispatcher.all_terminal():
                self.push(self.now + self.config.tick_minutes, EV_TICK, None)
        elif kind == EV_NOTIFY:
            handle, event_kind = payload
            run = self.backend.runs[handle]
            if self.backend.suppressed(run.site_id, self.now):
                self.record(self.now, "SUPPRESSED", f"{run.bundle.bundle_id} {event_kind}")
                return
            artifacts = run.artifacts if event_kind == EVENT_FINISHED else None
            self.dispatcher.on_event(handle, event_kind, self.now, artifacts)
        elif kind == EV_BUNDLE_START:
            self.backend.on_bundle_start(payload, self.now)
        elif kind == EV_STEP_START:
            handle, job_id = payload
            self.backend.on_step_start(handle, job_id, self.now)
        elif kind == EV_STEP_END:
            handle, job_id = payload
            self.backend.on_step_end(handle, job_id, self.now)
        elif kind == EV_BUNDLE_END:
            self.backend.on_bundle_end(payload, self.now)
        else:
            raise ValueError(f"unknown event kind {kind!r}")
