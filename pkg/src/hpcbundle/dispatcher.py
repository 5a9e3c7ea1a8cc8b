"""Job lifecycle ownership: intake, submission, outcome analysis, recovery.

The dispatcher binds each incoming job to an execution site, forms and
submits bundles through a pluggable backend, and walks every job to a
terminal state.  Timeouts confirmed by scheduler accounting double the
next wallclock request and rebind when the site can no longer hold the
job; missing sentinel files mark hardware faults and retry unchanged; a
heartbeat monitor cancels bundles that have gone silent far longer than
the wallclock they requested.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

from .bundling import Bundle, BundlePolicy, ExecutionSite, SiteRegistry
from .stepgraph import StepGraph, step_graph, emit_make

logger = logging.getLogger(__name__)

SENTINEL_FILENAME = "kim-done"
ACCOUNTING_FILENAME = "accounting.txt"
MAKEFILE_FILENAME = "Makefile"

# Accounting state words, mirroring scheduler accounting output.
ACCT_COMPLETED = "COMPLETED"
ACCT_TIMEOUT = "TIMEOUT"
ACCT_FAILED = "FAILED"
ACCT_CANCELLED = "CANCELLED"
_ACCT_WORDS = {ACCT_COMPLETED, ACCT_TIMEOUT, ACCT_FAILED, ACCT_CANCELLED}

# Backend lifecycle notification kinds.
EVENT_ACCEPTED = "ACCEPTED"
EVENT_QUEUED = "QUEUED"
EVENT_RUNNING = "RUNNING"
EVENT_FINISHED = "FINISHED"


class JobState(enum.Enum):
    PENDING = "pending"
    BOUND = "bound"
    BUNDLED = "bundled"
    RUNNING = "running"
    COMPLETED = "completed"
    ERRORED = "errored"


TERMINAL_STATES = (JobState.COMPLETED, JobState.ERRORED)

_ALLOWED_TRANSITIONS: dict[JobState, set[JobState]] = {
    JobState.PENDING: {JobState.BOUND, JobState.ERRORED},
    JobState.BOUND: {JobState.BUNDLED, JobState.ERRORED},
    JobState.BUNDLED: {JobState.RUNNING, JobState.BOUND, JobState.ERRORED},
    JobState.RUNNING: {JobState.COMPLETED, JobState.ERRORED, JobState.BOUND},
    JobState.COMPLETED: set(),
    JobState.ERRORED: set(),
}


@dataclass(frozen=True)
class JobSpec:
    """One requested job: a model/property pairing plus its resource ask."""

    job_id: str
    test_id: str
    model_id: str
    cores: int
    requested_minutes: int
    true_runtime_minutes: int = 0
    arrival_minute: int = 0


@dataclass
class JobRecord:
    """Lifecycle state machine for one job.

    ``requested_minutes`` only ever doubles, so it stays an exact power of
    two times ``original_minutes``.  ``true_runtime_minutes`` is simulation
    ground truth carried for bookkeeping; scheduling logic never reads it.
    """

    job_id: str
    test_id: str
    model_id: str
    cores: int
    requested_minutes: int
    original_minutes: int
    true_runtime_minutes: int
    state: JobState = JobState.PENDING
    bound_site: str | None = None
    attempts: int = 0
    error_kind: str | None = None
    ingested_at: int = 0
    terminal_at: int | None = None
    timeout_count: int = 0
    rebind_count: int = 0
    history: list[tuple[int, str, str]] = field(default_factory=list)

    def record(self, now: int, transition: str, detail: str = "") -> None:
        self.history.append((now, transition, detail))

    def transition(self, new_state: JobState, now: int, detail: str = "") -> None:
        if new_state not in _ALLOWED_TRANSITIONS[self.state]:
            raise ValueError(
                f"{self.job_id}: illegal transition {self.state.value} -> {new_state.value}"
            )
        self.state = new_state
        self.record(now, new_state.value, detail)
        if new_state in TERMINAL_STATES:
            self.terminal_at = now

    @property
    def doublings(self) -> int:
        ratio = self.requested_minutes // self.original_minutes
        return ratio.bit_length() - 1


@dataclass(frozen=True)
class StepOutcome:
    """Per-member verdict from inspecting a returned bundle."""

    job_id: str
    status: str  # COMPLETED | TIMEOUT | NODE_FAULT | CANCELLED | FAILED
    elapsed_minutes: int
    exit_code: int
    sentinel_present: bool


OUTCOME_NODE_FAULT = "NODE_FAULT"


@dataclass
class AccountingRecord:
    """Scheduler accounting for one bundle: one row per step."""

    bundle_id: str
    rows: dict[str, tuple[str, int, int]]  # job_id -> (state word, elapsed, exit code)

    def to_text(self) -> str:
        lines = [f"bundle_id {self.bundle_id}"]
        for job_id, (word, elapsed, code) in self.rows.items():
            lines.append(f"{job_id} {word} {elapsed} {code}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AccountingRecord":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("bundle_id "):
            raise ValueError("accounting file missing 'bundle_id' header")
        bundle_id = lines[0].split(maxsplit=1)[1].strip()
        rows: dict[str, tuple[str, int, int]] = {}
        for lineno, line in enumerate(lines[1:], start=2):
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"accounting line {lineno}: expected 4 fields, got {len(parts)}")
            job_id, word, elapsed, code = parts
            if word not in _ACCT_WORDS:
                raise ValueError(f"accounting line {lineno}: unknown state word {word!r}")
            rows[job_id] = (word, int(elapsed), int(code))
        return cls(bundle_id=bundle_id, rows=rows)


@dataclass
class BundleArtifacts:
    """What comes back from the backend when a bundle finishes or is cancelled."""

    accounting_text: str
    sentinels: dict[str, bool]
    outputs: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dir(cls, bundle_dir: str | Path) -> "BundleArtifacts":
        """Load artifacts from a per-bundle directory tree.

        Layout: ``<bundle_dir>/accounting.txt`` plus one subdirectory per
        step whose ``kim-done`` file marks normal conclusion.
        """
        root = Path(bundle_dir)
        accounting_text = (root / ACCOUNTING_FILENAME).read_text()
        sentinels: dict[str, bool] = {}
        outputs: dict[str, str] = {}
        for step_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            sentinels[step_dir.name] = (step_dir / SENTINEL_FILENAME).exists()
            blob = step_dir / "output.txt"
            if blob.exists():
                outputs[step_dir.name] = blob.read_text()
        return cls(accounting_text=accounting_text, sentinels=sentinels, outputs=outputs)

    def write_to(self, bundle_dir: str | Path) -> None:
        root = Path(bundle_dir)
        root.mkdir(parents=True, exist_ok=True)
        (root / ACCOUNTING_FILENAME).write_text(self.accounting_text)
        for job_id, present in self.sentinels.items():
            step_dir = root / job_id
            step_dir.mkdir(parents=True, exist_ok=True)
            if present:
                (step_dir / SENTINEL_FILENAME).write_text("done\n")
            if job_id in self.outputs:
                (step_dir / "output.txt").write_text(self.outputs[job_id])


@dataclass(frozen=True)
class BundleMaterials:
    """Everything the backend needs to run one bundle."""

    bundle: Bundle
    graph: StepGraph
    commands: dict[str, str]
    allotments: dict[str, int]  # buffered minutes per step
    make_text: str


@dataclass(frozen=True)
class ResultEnvelope:
    """Per-job result or error forwarded to the gateway-side sink."""

    job_id: str
    test_id: str
    model_id: str
    status: str  # "completed" | "resource-error" | "job-error" | "flaky-error"
    elapsed_minutes: int
    attempts: int


class BackendRejection(Exception):
    """Raised by a backend that refuses a bundle submission."""


class Backend(Protocol):
    def submit(self, bundle: Bundle, materials: BundleMaterials) -> str:
        """Accept a bundle for execution and return an opaque handle."""
        ...

    def cancel(self, handle: str) -> BundleArtifacts | None:
        """Cancel a bundle; return its artifacts so far, or None on failure."""
        ...


class ResultsSink(Protocol):
    def deliver(self, envelope: ResultEnvelope) -> None: ...


class CollectingSink:
    """Results sink that just accumulates envelopes (tests, simulation)."""

    def __init__(self) -> None:
        self.envelopes: list[ResultEnvelope] = []

    def deliver(self, envelope: ResultEnvelope) -> None:
        self.envelopes.append(envelope)

    def by_status(self) -> Counter:
        return Counter(e.status for e in self.envelopes)


@dataclass
class BundleReport:
    """Metrics-facing summary of one submitted bundle."""

    bundle_id: str
    site_id: str
    n_jobs: int
    request_cores: int
    request_minutes: int
    waste_fraction: float
    submitted_at: int
    finalized_at: int | None = None
    outcome_counts: Counter = field(default_factory=Counter)
    consumed_core_minutes: int = 0

    @property
    def requested_core_minutes(self) -> int:
        return self.request_cores * self.request_minutes


def default_command(job_id: str) -> str:
    """Placeholder step recipe; the real pipeline runs a container here."""
    return f"run-kim-job {job_id}"


class Dispatcher:
    """Single event-loop owner of all job and bundle state.

    Every method takes the current virtual time explicitly; the dispatcher
    itself never consults a clock, which keeps simulation runs exactly
    reproducible.
    """

    def __init__(
        self,
        registry: SiteRegistry,
        backend: Backend,
        sink: ResultsSink,
        retry_cap: int = 10,
        recorder: Callable[[int, str, str], None] | None = None,
        command_for: Callable[[str], str] = default_command,
    ):
        self.registry = registry
        self.policy: BundlePolicy = registry.policy
        self.backend = backend
        self.sink = sink
        self.retry_cap = retry_cap
        self.command_for = command_for
        self._recorder = recorder
        self.jobs: dict[str, JobRecord] = {}
        self.in_flight: dict[str, Bundle] = {}
        self.finalized: set[str] = set()
        self.bundle_reports: list[BundleReport] = []
        self._reports_by_handle: dict[str, BundleReport] = {}
        self.state_counts: Counter = Counter()
        self.ingested = 0
        self.timeout_total = 0
        self.rebind_total = 0

    # -- intake ---------------------------------------------------------

    def ingest(self, spec: JobSpec, now: int) -> JobRecord:
        """Register a new job, bind it, and try to form a bundle at its site."""
        if spec.cores < 1 or spec.requested_minutes < 1:
            raise ValueError(f"job {spec.job_id!r}: cores and minutes must be positive")
        if spec.job_id in self.jobs:
            raise ValueError(f"duplicate job_id {spec.job_id!r}")
        job = JobRecord(
            job_id=spec.job_id,
            test_id=spec.test_id,
            model_id=spec.model_id,
            cores=spec.cores,
            requested_minutes=spec.requested_minutes,
            original_minutes=spec.requested_minutes,
            true_runtime_minutes=spec.true_runtime_minutes,
            ingested_at=now,
        )
        job.record(now, "ingested", f"{spec.cores}c x {spec.requested_minutes}m")
        self.jobs[job.job_id] = job
        self.ingested += 1
        self.state_counts[job.state] += 1
        self._bind_or_error(job, now)
        if job.bound_site is not None:
            self._attempt_formation(self.registry.site(job.bound_site), now)
        return job

    def _bind_or_error(self, job: JobRecord, now: int) -> None:
        site = self.registry.bind(job, job.job_id)
        if site is None:
            self._error(job, now, "resource-error", "no compatible execution site")
            return
        job.bound_site = site.site_id
        self._set_state(job, JobState.BOUND, now, site.site_id)
        self._record(now, "BIND", f"{job.job_id} -> {site.site_id}")

    # -- bundle formation and submission --------------------------------

    def _attempt_formation(self, site: ExecutionSite, now: int) -> None:
        bundle = self.registry.try_form_bundle(site, self.jobs, force=False, now=now)
        if bundle is not None:
            self.submit(bundle, now)

    def flush(self, now: int) -> list[Bundle]:
        """Force bundle formation on sites overdue for an attempt."""
        bundles = self.registry.flush_due_sites(now, self.jobs)
        for bundle in bundles:
            self.submit(bundle, now)
        return bundles

    def submit(self, bundle: Bundle, now: int) -> str | None:
        """Submit a formed bundle; on backend rejection requeue its members."""
        materials = self._materials(bundle)
        try:
            handle = self.backend.submit(bundle, materials)
        except BackendRejection as exc:
            site = self.registry.site(bundle.site_id)
            for job_id, _ in bundle.members:
                self.registry.requeue_in_order(site, job_id)
                self.jobs[job_id].record(now, "backend-rejected", str(exc))
            self._record(now, "REJECTED", f"{bundle.bundle_id} at {bundle.site_id}: {exc}")
            return None
        bundle.submitted_at = now
        bundle.last_event_at = now
        for job_id, _ in bundle.members:
            job = self.jobs[job_id]
            job.attempts += 1
            self._set_state(job, JobState.BUNDLED, now, bundle.bundle_id)
        self.in_flight[handle] = bundle
        report = BundleReport(
            bundle_id=bundle.bundle_id,
            site_id=bundle.site_id,
            n_jobs=len(bundle.members),
            request_cores=bundle.request_cores,
            request_minutes=bundle.request_minutes,
            waste_fraction=bundle.waste_fraction(),
            submitted_at=now,
        )
        self.bundle_reports.append(report)
        self._reports_by_handle[handle] = report
        self._record(
            now,
            "SUBMIT",
            f"{bundle.bundle_id} -> {bundle.site_id} as {handle} "
            f"request {bundle.request_cores}c x {bundle.request_minutes}m "
            f"jobs {','.join(bundle.job_ids)}",
        )
        return handle

    def _materials(self, bundle: Bundle) -> BundleMaterials:
        graph = step_graph(bundle.members)
        commands = {job_id: self.command_for(job_id) for job_id, _ in bundle.members}
        allotments = {job_id: p.rect.minutes for job_id, p in bundle.members}
        return BundleMaterials(
            bundle=bundle,
            graph=graph,
            commands=commands,
            allotments=allotments,
            make_text=emit_make(graph, commands),
        )

    # -- backend notifications ------------------------------------------

    def on_event(self, handle: str, kind: str, now: int,
                 artifacts: BundleArtifacts | None = None) -> None:
        """Record a backend lifecycle notification for a bundle.

        Any event refreshes the heartbeat timestamp.  RUNNING advances
        member states; FINISHED triggers artifact analysis.  Events for
        unknown or already-finalized handles are logged and ignored.
        """
        if handle in self.finalized:
            self._record(now, "LATE_EVENT", f"{kind} for finalized {handle} ignored")
            return
        bundle = self.in_flight.get(handle)
        if bundle is None:
            logger.warning("event %s for unknown handle %s ignored", kind, handle)
            self._record(now, "UNKNOWN_EVENT", f"{kind} for unknown {handle} ignored")
            return
        bundle.last_event_at = now
        self._record(now, "NOTIFY", f"{bundle.bundle_id} {kind}")
        if kind == EVENT_RUNNING:
            for job_id, _ in bundle.members:
                job = self.jobs[job_id]
                if job.state is JobState.BUNDLED:
                    self._set_state(job, JobState.RUNNING, now, bundle.bundle_id)
        elif kind == EVENT_FINISHED:
            if artifacts is None:
                raise ValueError(f"FINISHED event for {handle} carries no artifacts")
            self.analyze_bundle(handle, artifacts, now)

    # -- outcome analysis -----------------------------------------------

    def analyze_bundle(self, handle: str, artifacts: BundleArtifacts,
                       now: int) -> list[StepOutcome]:
        """Inspect a returned bundle and route every member onward.

        Verdicts per member: accounting TIMEOUT doubles the next request;
        accounting CANCELLED retries unchanged; a missing sentinel without
        a timeout means a hardware fault, also retried unchanged; FAILED
        with the sentinel present is a genuine job error; COMPLETED with
        the sentinel packages a result.  An unparsable accounting file is
        treated as a hardware fault for every unfinished member.
        """
        bundle = self.in_flight.pop(handle, None)
        if bundle is None:
            raise KeyError(f"unknown bundle handle {handle!r}")
        self.finalized.add(handle)
        report = self._reports_by_handle[handle]
        report.finalized_at = now

        try:
            accounting = AccountingRecord.from_text(artifacts.accounting_text)
            rows = accounting.rows
        except ValueError as exc:
            logger.warning("accounting for %s unparsable: %s", handle, exc)
            self._record(now, "BAD_ACCOUNTING", f"{bundle.bundle_id}: {exc}")
            rows = {}

        outcomes: list[StepOutcome] = []
        for job_id, _ in bundle.members:
            job = self.jobs[job_id]
            if job.state in TERMINAL_STATES:
                continue
            row = rows.get(job_id)
            sentinel = artifacts.sentinels.get(job_id, False)
            outcome = self._classify(job_id, row, sentinel)
            outcomes.append(outcome)
            report.outcome_counts[outcome.status] += 1
            report.consumed_core_minutes += outcome.elapsed_minutes * job.cores
            self._apply_outcome(job, outcome, now)
        self._record(
            now,
            "ANALYZED",
            f"{bundle.bundle_id} " + " ".join(f"{o.job_id}={o.status}" for o in outcomes),
        )
        return outcomes

    @staticmethod
    def _classify(job_id: str, row: tuple[str, int, int] | None,
                  sentinel: bool) -> StepOutcome:
        word, elapsed, code = row if row is not None else ("", 0, 0)
        if word == ACCT_TIMEOUT:
            status = ACCT_TIMEOUT
        elif word == ACCT_CANCELLED:
            status = ACCT_CANCELLED
        elif not sentinel:
            status = OUTCOME_NODE_FAULT
        elif word == ACCT_FAILED:
            status = ACCT_FAILED
        else:
            status = ACCT_COMPLETED
        return StepOutcome(
            job_id=job_id,
            status=status,
            elapsed_minutes=elapsed,
            exit_code=code,
            sentinel_present=sentinel,
        )

    def _apply_outcome(self, job: JobRecord, outcome: StepOutcome, now: int) -> None:
        if outcome.status == ACCT_COMPLETED:
            self._mark_running_if_needed(job, now)
            self._set_state(job, JobState.COMPLETED, now, f"elapsed {outcome.elapsed_minutes}m")
            self.sink.deliver(
                ResultEnvelope(
                    job_id=job.job_id,
                    test_id=job.test_id,
                    model_id=job.model_id,
                    status="completed",
                    elapsed_minutes=outcome.elapsed_minutes,
                    attempts=job.attempts,
                )
            )
        elif outcome.status == ACCT_TIMEOUT:
            self.handle_timeout(job, now)
        elif outcome.status == ACCT_FAILED:
            self._mark_running_if_needed(job, now)
            self._error(job, now, "job-error", f"exit code {outcome.exit_code}")
        else:  # NODE_FAULT or CANCELLED: retry with the request unchanged
            job.record(now, outcome.status.lower(), "retry with unchanged request")
            self._retry(job, now)

    def _mark_running_if_needed(self, job: JobRecord, now: int) -> None:
        # A stalled RUNNING notification may never have arrived; the
        # artifacts prove the step ran, so advance through RUNNING.
        if job.state is JobState.BUNDLED:
            self._set_state(job, JobState.RUNNING, now, "inferred from artifacts")

    # -- recovery paths --------------------------------------------------

    def handle_timeout(self, job: JobRecord, now: int) -> None:
        """Double the wallclock request and requeue, rebinding if needed."""
        job.timeout_count += 1
        self.timeout_total += 1
        previous = job.requested_minutes
        job.requested_minutes *= 2
        job.record(now, "timeout-doubled", f"wallclock {previous} -> {job.requested_minutes}")
        self._record(now, "TIMEOUT", f"{job.job_id} wallclock {previous} -> {job.requested_minutes}")
        self._retry(job, now)

    def _retry(self, job: JobRecord, now: int) -> None:
        if job.attempts >= self.retry_cap:
            self._mark_running_if_needed(job, now)
            self._error(job, now, "flaky-error", f"retry cap reached after {job.attempts} attempts")
            return
        self._to_bound(job, now)
        site = self.registry.site(job.bound_site) if job.bound_site else None
        buffer = self.policy.timeout_buffer_minutes
        if (
            site is not None
            and site.active
            and site.accommodates(job.cores, job.requested_minutes, buffer)
        ):
            self.registry.enqueue(site, job.job_id)
            job.record(now, "requeued", site.site_id)
            self._attempt_formation(site, now)
        else:
            self._rebind(job, now)

    def _rebind(self, job: JobRecord, now: int) -> None:
        previous = job.bound_site
        job.bound_site = None
        site = self.registry.bind(job, job.job_id)
        if site is None:
            self._error(
                job, now, "resource-error",
                f"request {job.cores}c x {job.requested_minutes}m exceeds every active site",
            )
            return
        job.bound_site = site.site_id
        job.rebind_count += 1
        self.rebind_total += 1
        job.record(now, "rebound", f"{previous} -> {site.site_id}")
        self._record(now, "REBIND", f"{job.job_id} {previous} -> {site.site_id}")
        self._attempt_formation(site, now)

    def _to_bound(self, job: JobRecord, now: int) -> None:
        if job.state is not JobState.BOUND:
            self._set_state(job, JobState.BOUND, now, "retry")

    # -- heartbeat monitor ----------------------------------------------

    def monitor(self, now: int) -> list[str]:
        """Cancel in-flight bundles silent beyond the heartbeat threshold.

        A cancel that the backend refuses is simply retried at the next
        tick.  Cancelled members that already completed stay completed;
        the rest requeue with unchanged requests.
        """
        cancelled: list[str] = []
        threshold = self.policy.heartbeat_factor
        for handle in list(self.in_flight):
            bundle = self.in_flight[handle]
            if now - bundle.last_event_at <= threshold * bundle.request_minutes:
                continue
            artifacts = self.backend.cancel(handle)
            if artifacts is None:
                self._record(now, "CANCEL_FAILED", f"{bundle.bundle_id}; will retry")
                continue
            self._record(
                now,
                "CANCEL",
                f"{bundle.bundle_id} silent {now - bundle.last_event_at}m "
                f"> {threshold} x {bundle.request_minutes}m",
            )
            cancelled.append(handle)
            self.analyze_bundle(handle, artifacts, now)
        return cancelled

    # -- site control ----------------------------------------------------

    def set_site_active(self, site_id: str, active: bool, now: int) -> None:
        """Activate or deactivate a site; deactivation rebinds its queue.

        Queued jobs move to compatible active sites (or become resource
        errors); in-flight bundles are left to the heartbeat monitor.
        """
        site = self.registry.sites[site_id]  # KeyError for unknown ids
        if site.active == active:
            return
        site.active = active
        self._record(now, "SITE", f"{site_id} {'activated' if active else 'deactivated'}")
        if active:
            return
        drained = list(site.queue)
        site.queue.clear()
        for job_id in drained:
            job = self.jobs[job_id]
            job.record(now, "site-deactivated", site_id)
            self._rebind(job, now)

    # -- bookkeeping ------------------------------------------------------

    def _error(self, job: JobRecord, now: int, kind: str, detail: str) -> None:
        job.error_kind = kind
        self._set_state(job, JobState.ERRORED, now, f"{kind}: {detail}")
        self._record(now, "ERROR", f"{job.job_id} {kind}: {detail}")
        self.sink.deliver(
            ResultEnvelope(
                job_id=job.job_id,
                test_id=job.test_id,
                model_id=job.model_id,
                status=kind,
                elapsed_minutes=0,
                attempts=job.attempts,
            )
        )

    def _set_state(self, job: JobRecord, new_state: JobState, now: int, detail: str) -> None:
        self.state_counts[job.state] -= 1
        job.transition(new_state, now, detail)
        self.state_counts[new_state] += 1

    def _record(self, now: int, kind: str, detail: str) -> None:
        if self._recorder is not None:
            self._recorder(now, kind, detail)

    def terminal_count(self) -> int:
        return self.state_counts[JobState.COMPLETED] + self.state_counts[JobState.ERRORED]

    def live_count(self) -> int:
        """Jobs ingested but not yet terminal (pending through running)."""
        return self.ingested - self.terminal_count()

    def all_terminal(self) -> bool:
        return self.terminal_count() == self.ingested

    def conservation_ok(self) -> bool:
        """Every ingested job is in exactly one state bucket."""
        total = sum(self.state_counts.values())
        return total == self.ingested == len(self.jobs) and all(
            v >= 0 for v in self.state_counts.values()
        )
