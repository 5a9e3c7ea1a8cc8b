"""Execution sites, random job binding, and online bundle formation.

Each HPC cluster/partition pair is an execution site with a FIFO queue of
bound jobs.  New jobs are bound to a compatible site chosen uniformly at
random.  A bundle forms by packing the queue, in arrival order, into a
fresh bin of the site until the sufficiency policy is met; sites with
idle queues are flushed (forced single-pass packing) at a regular
interval so small queues are never stranded.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol

from .packing import PackingBin, Placement, ResourceRect, bounding_request


class JobLike(Protocol):
    """Anything with a resource request; satisfied by dispatcher JobRecord."""

    cores: int
    requested_minutes: int


@dataclass(frozen=True)
class BundlePolicy:
    """Knobs governing bundle formation and fault handling.

    A queue is sufficient once ``min_jobs`` members are packed or the
    packed area reaches ``min_fill`` of the bin.  ``timeout_buffer_minutes``
    is added to every packed height so a scheduler grace-period kill is
    distinguishable from normal completion.  A bundle silent for more than
    ``heartbeat_factor`` times its requested minutes is presumed lost.
    """

    min_jobs: int = 5
    min_fill: float = 0.5
    flush_interval_minutes: int = 60
    timeout_buffer_minutes: int = 5
    heartbeat_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.min_jobs < 1:
            raise ValueError("min_jobs must be >= 1")
        if not 0.0 <= self.min_fill <= 1.0:
            raise ValueError("min_fill must be in [0, 1]")
        if self.flush_interval_minutes < 1:
            raise ValueError("flush_interval_minutes must be >= 1")
        if self.timeout_buffer_minutes < 0:
            raise ValueError("timeout_buffer_minutes must be >= 0")
        if self.heartbeat_factor <= 1.0:
            raise ValueError("heartbeat_factor must be > 1")


@dataclass
class ExecutionSite:
    """A cluster/partition pair with its queue of bound job ids."""

    site_id: str
    cores_per_node: int
    max_walltime_minutes: int
    node_sharing: bool = False
    active: bool = True
    queue: list[str] = field(default_factory=list)
    last_attempt_at: int = 0

    def __post_init__(self) -> None:
        if self.cores_per_node < 1:
            raise ValueError(f"{self.site_id}: cores_per_node must be >= 1")
        if self.max_walltime_minutes < 1:
            raise ValueError(f"{self.site_id}: max_walltime_minutes must be >= 1")

    def accommodates(self, cores: int, minutes: int, buffer_minutes: int) -> bool:
        """True if a fresh bin of this site can hold the buffered request."""
        return (
            cores <= self.cores_per_node
            and minutes + buffer_minutes <= self.max_walltime_minutes
        )


@dataclass
class Bundle:
    """An ordered set of packed jobs submitted to the backend as one job.

    Placement heights include the timeout buffer; the request is the
    bounding rectangle of the placements, anchored at the origin.
    """

    bundle_id: str
    site_id: str
    members: list[tuple[str, Placement]]
    request_cores: int
    request_minutes: int
    submitted_at: int = 0
    last_event_at: int = 0

    @property
    def job_ids(self) -> list[str]:
        return [job_id for job_id, _ in self.members]

    def waste_fraction(self) -> float:
        from .packing import waste_fraction

        return waste_fraction([p for _, p in self.members])


class SiteRegistry:
    """Owns the execution sites, their queues, and bundle formation.

    All mutation happens through one event loop, so no locking; reads for
    reporting take snapshots of the queue lists.
    """

    def __init__(
        self,
        sites: Iterable[ExecutionSite],
        policy: BundlePolicy,
        rng: random.Random | None = None,
    ):
        self.sites: dict[str, ExecutionSite] = {}
        for site in sites:
            if site.site_id in self.sites:
                raise ValueError(f"duplicate site_id {site.site_id!r}")
            self.sites[site.site_id] = site
        self.policy = policy
        self.rng = rng if rng is not None else random.Random()
        self._bundle_seq = 0
        self._queue_seq = 0
        self._seq_of: dict[str, int] = {}

    def site(self, site_id: str) -> ExecutionSite:
        return self.sites[site_id]

    def compatible_sites(self, cores: int, minutes: int) -> list[ExecutionSite]:
        """Active sites whose fresh bin holds the request plus buffer."""
        buffer = self.policy.timeout_buffer_minutes
        return [
            s
            for s in self.sites.values()
            if s.active and s.accommodates(cores, minutes, buffer)
        ]

    def bind(self, job: JobLike, job_id: str) -> ExecutionSite | None:
        """Bind ``job`` to a uniformly random compatible site.

        Appends the job id to the chosen site's queue and returns the
        site; ``None`` when no active site can take the request, which the
        caller turns into a terminal resource error.
        """
        compatible = self.compatible_sites(job.cores, job.requested_minutes)
        if not compatible:
            return None
        site = compatible[self.rng.randrange(len(compatible))]
        self._append_to_queue(site, job_id)
        return site

    def enqueue(self, site: ExecutionSite, job_id: str) -> None:
        """Append a job to a site's queue as a fresh arrival (retries)."""
        self._append_to_queue(site, job_id)

    def _append_to_queue(self, site: ExecutionSite, job_id: str) -> None:
        self._queue_seq += 1
        self._seq_of[job_id] = self._queue_seq
        site.queue.append(job_id)

    def requeue_in_order(self, site: ExecutionSite, job_id: str) -> None:
        """Reinsert a job at its original queue position (backend rejection)."""
        seq = self._seq_of[job_id]
        pos = 0
        while pos < len(site.queue) and self._seq_of[site.queue[pos]] < seq:
            pos += 1
        site.queue.insert(pos, job_id)

    def try_form_bundle(
        self,
        site: ExecutionSite,
        jobs: Mapping[str, JobLike],
        force: bool = False,
        now: int = 0,
    ) -> Bundle | None:
        """Pack the site queue into a fresh bin until sufficiency.

        The queue is walked in FIFO order; a job whose buffered rectangle
        no longer fits the partially packed bin keeps its queue position
        and is skipped.  Packing stops as soon as the policy is satisfied.
        Returns ``None`` (queue untouched) when the packed jobs are
        insufficient and ``force`` is unset, or when nothing packed at
        all.  Every call, successful or not, resets the site's flush
        timer.
        """
        site.last_attempt_at = now
        if not site.active:
            return None

        bin_ = PackingBin(site.cores_per_node, site.max_walltime_minutes)
        buffer = self.policy.timeout_buffer_minutes
        packed: list[tuple[str, Placement]] = []
        for job_id in site.queue:
            job = jobs[job_id]
            rect = ResourceRect(job.cores, job.requested_minutes + buffer)
            placement = bin_.insert(rect)
            if placement is None:
                continue
            packed.append((job_id, placement))
            if self._sufficient(bin_, len(packed)):
                break

        if not packed:
            return None
        if not force and not self._sufficient(bin_, len(packed)):
            return None

        packed_ids = {job_id for job_id, _ in packed}
        site.queue = [j for j in site.queue if j not in packed_ids]
        cores, minutes = bounding_request([p for _, p in packed])
        self._bundle_seq += 1
        return Bundle(
            bundle_id=f"B{self._bundle_seq:05d}",
            site_id=site.site_id,
            members=packed,
            request_cores=cores,
            request_minutes=minutes,
            submitted_at=now,
            last_event_at=now,
        )

    def _sufficient(self, bin_: PackingBin, packed_count: int) -> bool:
        if packed_count >= self.policy.min_jobs:
            return True
        return bin_.used_area() / bin_.area >= self.policy.min_fill

    def flush_due_sites(self, now: int, jobs: Mapping[str, JobLike]) -> list[Bundle]:
        """Force-form bundles on active sites overdue for an attempt."""
        bundles = []
        for site in self.sites.values():
            if not site.active:
                continue
            if now - site.last_attempt_at < self.policy.flush_interval_minutes:
                continue
            bundle = self.try_form_bundle(site, jobs, force=True, now=now)
            if bundle is not None:
                bundles.append(bundle)
        return bundles

    def snapshot_queues(self) -> dict[str, list[str]]:
        """Read-only copy of every site queue, for reporting."""
        return {site_id: list(site.queue) for site_id, site in self.sites.items()}
