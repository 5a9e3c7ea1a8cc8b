"""On-disk formats: the sites/config file, workload CSV, policy string.

The sites file is a line-oriented section format (documented in the
README) holding execution-site definitions plus optional simulation
settings and fault injections.  The workload is plain CSV.  Parsers
report errors with line numbers; emitters produce text whose re-parse
is identical, so parse-emit round trips are stable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .bundling import BundlePolicy, ExecutionSite
from .dispatcher import JobSpec
from .simcluster import (
    GLOBAL_STALL,
    NODE_FAULT,
    STEP_OVERRUN,
    FaultSpec,
    QueueWait,
    SimConfig,
)

WORKLOAD_COLUMNS = [
    "job_id",
    "test_id",
    "model_id",
    "cores",
    "requested_minutes",
    "true_runtime_minutes",
    "arrival_minute",
]

_POLICY_KEYS = {
    "min_jobs": ("min_jobs", int),
    "min_fill": ("min_fill", float),
    "flush": ("flush_interval_minutes", int),
    "buffer": ("timeout_buffer_minutes", int),
    "heartbeat": ("heartbeat_factor", float),
}


class ParseError(ValueError):
    """Malformed input file; message carries the line number."""


def _fail(lineno: int, message: str) -> None:
    raise ParseError(f"line {lineno}: {message}")


@dataclass
class SiteFileContents:
    """Everything a sites file can declare."""

    sites: list[ExecutionSite] = field(default_factory=list)
    queue_waits: dict[str, QueueWait] = field(default_factory=dict)
    grace_minutes: int | None = None
    tick_minutes: int | None = None
    faults: list[FaultSpec] = field(default_factory=list)

    def build_config(self, seed: int, horizon_minutes: int = 1_000_000) -> SimConfig:
        kwargs: dict[str, object] = {}
        if self.grace_minutes is not None:
            kwargs["grace_minutes"] = self.grace_minutes
        if self.tick_minutes is not None:
            kwargs["tick_minutes"] = self.tick_minutes
        return SimConfig(
            seed=seed,
            horizon_minutes=horizon_minutes,
            queue_waits=dict(self.queue_waits),
            faults=tuple(self.faults),
            **kwargs,
        )


def _parse_bool(value: str, lineno: int) -> bool:
    if value.lower() in ("true", "yes", "1"):
        return True
    if value.lower() in ("false", "no", "0"):
        return False
    _fail(lineno, f"expected a boolean, got {value!r}")


def _parse_int(value: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        _fail(lineno, f"expected an integer, got {value!r}")


def _parse_queue_wait(value: str, lineno: int) -> QueueWait:
    parts = value.split()
    try:
        if parts[0] == "fixed" and len(parts) == 2:
            return QueueWait("fixed", int(parts[1]))
        if parts[0] == "uniform" and len(parts) == 3:
            return QueueWait("uniform", int(parts[1]), int(parts[2]))
    except (ValueError, IndexError):
        pass
    _fail(lineno, f"expected 'fixed N' or 'uniform LOW HIGH', got {value!r}")


def parse_sites_text(text: str) -> SiteFileContents:
    contents = SiteFileContents()
    section: str | None = None
    site_kv: dict[str, tuple[str, int]] = {}
    site_id: str | None = None
    fault_kv: dict[str, tuple[str, int]] = {}
    section_line = 0

    def close_section() -> None:
        if section == "site":
            contents.sites.append(_build_site(site_id, site_kv, section_line))
            wait = site_kv.get("queue_wait")
            if wait is not None:
                contents.queue_waits[site_id] = _parse_queue_wait(*wait)
        elif section == "fault":
            contents.faults.append(_build_fault(fault_kv, section_line))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            close_section()
            site_kv, fault_kv = {}, {}
            header = line[1:-1].strip()
            section_line = lineno
            if header == "sim":
                section = "sim"
            elif header == "fault":
                section = "fault"
            elif header == "site" or header.startswith("site "):
                section = "site"
                site_id = header[len("site"):].strip()
                if not site_id:
                    _fail(lineno, "site section needs an id: [site <id>]")
            else:
                _fail(lineno, f"unknown section {header!r}")
            continue
        if "=" not in line:
            _fail(lineno, f"expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if section == "sim":
            if key == "grace_minutes":
                contents.grace_minutes = _parse_int(value, lineno)
            elif key == "tick_minutes":
                contents.tick_minutes = _parse_int(value, lineno)
            else:
                _fail(lineno, f"unknown [sim] key {key!r}")
        elif section == "site":
            site_kv[key] = (value, lineno)
        elif section == "fault":
            fault_kv[key] = (value, lineno)
        else:
            _fail(lineno, "key-value pair outside any section")
    close_section()

    ids = [s.site_id for s in contents.sites]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate site ids")
    return contents


_SITE_KEYS = {"cores_per_node", "max_walltime_minutes", "node_sharing", "active", "queue_wait"}


def _build_site(site_id: str, kv: dict[str, tuple[str, int]], lineno: int) -> ExecutionSite:
    for key, (_, key_line) in kv.items():
        if key not in _SITE_KEYS:
            _fail(key_line, f"unknown site key {key!r}")
    for required in ("cores_per_node", "max_walltime_minutes"):
        if required not in kv:
            _fail(lineno, f"site {site_id!r} missing {required}")
    try:
        return ExecutionSite(
            site_id=site_id,
            cores_per_node=_parse_int(*kv["cores_per_node"]),
            max_walltime_minutes=_parse_int(*kv["max_walltime_minutes"]),
            node_sharing=_parse_bool(*kv["node_sharing"]) if "node_sharing" in kv else False,
            active=_parse_bool(*kv["active"]) if "active" in kv else True,
        )
    except ParseError:
        raise
    except ValueError as exc:
        _fail(lineno, f"site {site_id!r}: {exc}")


def _build_fault(kv: dict[str, tuple[str, int]], lineno: int) -> FaultSpec:
    if "kind" not in kv or "target" not in kv:
        _fail(lineno, "fault section needs kind and target")
    kind = kv["kind"][0]
    target = kv["target"][0]
    try:
        if kind == STEP_OVERRUN:
            if "multiplier" not in kv:
                _fail(lineno, "STEP_OVERRUN needs multiplier")
            return FaultSpec(kind, target, multiplier=_parse_int(*kv["multiplier"]))
        if kind == NODE_FAULT:
            times = _parse_int(*kv["times"]) if "times" in kv else 1
            return FaultSpec(kind, target, times=times)
        if kind == GLOBAL_STALL:
            if "window" not in kv:
                _fail(lineno, "GLOBAL_STALL needs window")
            value, value_line = kv["window"]
            parts = value.split()
            if len(parts) != 2:
                _fail(value_line, f"expected 'window = START END', got {value!r}")
            return FaultSpec(
                kind, target,
                window=(_parse_int(parts[0], value_line), _parse_int(parts[1], value_line)),
            )
    except ParseError:
        raise
    except ValueError as exc:
        _fail(lineno, str(exc))
    _fail(kv["kind"][1], f"unknown fault kind {kind!r}")


def emit_sites(contents: SiteFileContents) -> str:
    lines: list[str] = []
    if contents.grace_minutes is not None or contents.tick_minutes is not None:
        lines.append("[sim]")
        if contents.grace_minutes is not None:
            lines.append(f"grace_minutes = {contents.grace_minutes}")
        if contents.tick_minutes is not None:
            lines.append(f"tick_minutes = {contents.tick_minutes}")
        lines.append("")
    for site in contents.sites:
        lines.append(f"[site {site.site_id}]")
        lines.append(f"cores_per_node = {site.cores_per_node}")
        lines.append(f"max_walltime_minutes = {site.max_walltime_minutes}")
        lines.append(f"node_sharing = {'true' if site.node_sharing else 'false'}")
        lines.append(f"active = {'true' if site.active else 'false'}")
        wait = contents.queue_waits.get(site.site_id)
        if wait is not None:
            if wait.kind == "fixed":
                lines.append(f"queue_wait = fixed {wait.low}")
            else:
                lines.append(f"queue_wait = uniform {wait.low} {wait.high}")
        lines.append("")
    for fault in contents.faults:
        lines.append("[fault]")
        lines.append(f"kind = {fault.kind}")
        lines.append(f"target = {fault.target}")
        if fault.kind == STEP_OVERRUN:
            lines.append(f"multiplier = {fault.multiplier}")
        elif fault.kind == NODE_FAULT:
            lines.append(f"times = {fault.times}")
        else:
            lines.append(f"window = {fault.window[0]} {fault.window[1]}")
        lines.append("")
    return "\n".join(lines)


def parse_sites_file(path: str | Path) -> SiteFileContents:
    return parse_sites_text(Path(path).read_text())


def parse_workload_text(text: str) -> list[JobSpec]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != WORKLOAD_COLUMNS:
        raise ParseError(
            f"line 1: expected header {','.join(WORKLOAD_COLUMNS)}, "
            f"got {','.join(reader.fieldnames or ['<empty>'])}"
        )
    jobs: list[JobSpec] = []
    seen: set[str] = set()
    for row in reader:
        lineno = reader.line_num
        if None in row.values() or None in row:
            _fail(lineno, "wrong number of fields")
        job_id = row["job_id"]
        if job_id in seen:
            _fail(lineno, f"duplicate job_id {job_id!r}")
        seen.add(job_id)
        cores = _parse_int(row["cores"], lineno)
        requested = _parse_int(row["requested_minutes"], lineno)
        true_runtime = _parse_int(row["true_runtime_minutes"], lineno)
        arrival = _parse_int(row["arrival_minute"], lineno)
        if cores < 1 or requested < 1 or true_runtime < 1:
            _fail(lineno, "cores, requested and true runtime must be positive")
        if arrival < 0:
            _fail(lineno, "arrival_minute must be non-negative")
        jobs.append(
            JobSpec(
                job_id=job_id,
                test_id=row["test_id"],
                model_id=row["model_id"],
                cores=cores,
                requested_minutes=requested,
                true_runtime_minutes=true_runtime,
                arrival_minute=arrival,
            )
        )
    return jobs


def emit_workload(jobs: Sequence[JobSpec]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(WORKLOAD_COLUMNS)
    for job in jobs:
        writer.writerow(
            [
                job.job_id,
                job.test_id,
                job.model_id,
                job.cores,
                job.requested_minutes,
                job.true_runtime_minutes,
                job.arrival_minute,
            ]
        )
    return out.getvalue()


def parse_workload_file(path: str | Path) -> list[JobSpec]:
    return parse_workload_text(Path(path).read_text())


def parse_policy(text: str) -> BundlePolicy:
    """Build a bundling policy from ``key=value`` pairs joined by commas.

    Keys: min_jobs, min_fill, flush, buffer, heartbeat.  Omitted keys
    keep their defaults.
    """
    kwargs: dict[str, object] = {}
    if text.strip():
        for chunk in text.split(","):
            if "=" not in chunk:
                raise ParseError(f"policy chunk {chunk!r} is not key=value")
            key, value = (part.strip() for part in chunk.split("=", 1))
            if key not in _POLICY_KEYS:
                raise ParseError(f"unknown policy key {key!r}")
            attr, convert = _POLICY_KEYS[key]
            try:
                kwargs[attr] = convert(value)
            except ValueError:
                raise ParseError(f"policy key {key!r}: bad value {value!r}") from None
    return BundlePolicy(**kwargs)
