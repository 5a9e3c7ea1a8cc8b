"""Run metrics: per-bundle and per-job tables, summaries, aggregation.

Everything here reads dispatcher state after a run and renders it as
CSV rows (fixed column order, header row always present) or as a plain
text summary.  ``aggregate`` pools several runs' job tables, for
comparing seeds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dispatcher import Dispatcher, JobState

METRICS_COLUMNS = [
    "bundle_id",
    "site_id",
    "n_jobs",
    "request_cores",
    "request_minutes",
    "waste_fraction",
    "n_completed",
    "n_timeout",
    "n_node_fault",
    "n_cancelled",
    "n_failed",
]

JOBS_COLUMNS = [
    "job_id",
    "test_id",
    "model_id",
    "state",
    "attempts",
    "doublings",
    "turnaround_minutes",
]

_OUTCOME_COLUMN = {
    "COMPLETED": "n_completed",
    "TIMEOUT": "n_timeout",
    "NODE_FAULT": "n_node_fault",
    "CANCELLED": "n_cancelled",
    "FAILED": "n_failed",
}


def bundle_rows(dispatcher: Dispatcher) -> list[dict[str, object]]:
    rows = []
    for report in dispatcher.bundle_reports:
        row: dict[str, object] = {
            "bundle_id": report.bundle_id,
            "site_id": report.site_id,
            "n_jobs": report.n_jobs,
            "request_cores": report.request_cores,
            "request_minutes": report.request_minutes,
            "waste_fraction": f"{report.waste_fraction:.6f}",
            "n_completed": 0,
            "n_timeout": 0,
            "n_node_fault": 0,
            "n_cancelled": 0,
            "n_failed": 0,
        }
        for status, count in report.outcome_counts.items():
            row[_OUTCOME_COLUMN[status]] = count
        rows.append(row)
    return rows


def job_rows(dispatcher: Dispatcher) -> list[dict[str, object]]:
    rows = []
    for job in dispatcher.jobs.values():
        turnaround = ""
        if job.terminal_at is not None:
            turnaround = job.terminal_at - job.ingested_at
        rows.append(
            {
                "job_id": job.job_id,
                "test_id": job.test_id,
                "model_id": job.model_id,
                "state": job.state.value,
                "attempts": job.attempts,
                "doublings": job.doublings,
                "turnaround_minutes": turnaround,
            }
        )
    return rows


def _csv_text(columns: Sequence[str], rows: Iterable[dict[str, object]]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return out.getvalue()


def metrics_csv_text(dispatcher: Dispatcher) -> str:
    return _csv_text(METRICS_COLUMNS, bundle_rows(dispatcher))


def jobs_csv_text(dispatcher: Dispatcher) -> str:
    return _csv_text(JOBS_COLUMNS, job_rows(dispatcher))


def write_metrics_csv(path: str | Path, dispatcher: Dispatcher) -> None:
    Path(path).write_text(metrics_csv_text(dispatcher))


def write_jobs_csv(path: str | Path, dispatcher: Dispatcher) -> None:
    Path(path).write_text(jobs_csv_text(dispatcher))


@dataclass
class Summary:
    """Aggregate view of one or more runs."""

    n_jobs: int = 0
    n_completed: int = 0
    n_errored: int = 0
    n_live: int = 0
    n_bundles: int = 0
    mean_turnaround: float = 0.0
    p95_turnaround: float = 0.0
    timeout_count: int = 0
    rebind_count: int = 0
    bundles_per_site: dict[str, int] = field(default_factory=dict)
    core_minutes_requested: int = 0
    core_minutes_consumed: int = 0

    def render(self) -> str:
        lines = [
            f"jobs            {self.n_jobs}",
            f"  completed     {self.n_completed}",
            f"  errored       {self.n_errored}",
            f"  live          {self.n_live}",
            f"bundles         {self.n_bundles}",
        ]
        for site_id in sorted(self.bundles_per_site):
            lines.append(f"  {site_id:<13} {self.bundles_per_site[site_id]}")
        lines += [
            f"turnaround mean {self.mean_turnaround:.1f} min",
            f"turnaround p95  {self.p95_turnaround:.1f} min",
            f"timeouts        {self.timeout_count}",
            f"rebinds         {self.rebind_count}",
            f"core-min asked  {self.core_minutes_requested}",
            f"core-min used   {self.core_minutes_consumed}",
        ]
        return "\n".join(lines)


def _turnaround_stats(turnarounds: Sequence[int]) -> tuple[float, float]:
    if not turnarounds:
        return 0.0, 0.0
    arr = np.asarray(turnarounds, dtype=float)
    return float(arr.mean()), float(np.percentile(arr, 95))


def summarize(dispatcher: Dispatcher) -> Summary:
    turnarounds = [
        job.terminal_at - job.ingested_at
        for job in dispatcher.jobs.values()
        if job.terminal_at is not None
    ]
    mean, p95 = _turnaround_stats(turnarounds)
    per_site: dict[str, int] = {}
    for report in dispatcher.bundle_reports:
        per_site[report.site_id] = per_site.get(report.site_id, 0) + 1
    return Summary(
        n_jobs=dispatcher.ingested,
        n_completed=dispatcher.state_counts[JobState.COMPLETED],
        n_errored=dispatcher.state_counts[JobState.ERRORED],
        n_live=dispatcher.live_count(),
        n_bundles=len(dispatcher.bundle_reports),
        mean_turnaround=mean,
        p95_turnaround=p95,
        timeout_count=dispatcher.timeout_total,
        rebind_count=dispatcher.rebind_total,
        bundles_per_site=per_site,
        core_minutes_requested=sum(
            r.requested_core_minutes for r in dispatcher.bundle_reports
        ),
        core_minutes_consumed=sum(
            r.consumed_core_minutes for r in dispatcher.bundle_reports
        ),
    )


def read_jobs_csv(path: str | Path) -> list[dict[str, str]]:
    """Load a jobs table, insisting on the exact column schema."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != JOBS_COLUMNS:
            raise ValueError(
                f"{path}: expected columns {JOBS_COLUMNS}, found {reader.fieldnames}"
            )
        return list(reader)


def aggregate(paths: Sequence[str | Path]) -> Summary:
    """Pool several runs' job tables into one summary.

    Only job-level fields are aggregated; bundle-level numbers stay zero
    because jobs tables do not carry them.
    """
    if not paths:
        raise ValueError("at least one jobs table is required")
    summary = Summary()
    turnarounds: list[int] = []
    for path in paths:
        for row in read_jobs_csv(path):
            summary.n_jobs += 1
            if row["state"] == JobState.COMPLETED.value:
                summary.n_completed += 1
            elif row["state"] == JobState.ERRORED.value:
                summary.n_errored += 1
            else:
                summary.n_live += 1
            if row["turnaround_minutes"] != "":
                turnarounds.append(int(row["turnaround_minutes"]))
    summary.mean_turnaround, summary.p95_turnaround = _turnaround_stats(turnarounds)
    return summary
