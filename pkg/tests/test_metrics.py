"""Metrics tables, summaries, and cross-run aggregation."""

import pytest

from hpcbundle.bundling import BundlePolicy, ExecutionSite
from hpcbundle.dispatcher import JobSpec
from hpcbundle.metrics import (
    JOBS_COLUMNS,
    METRICS_COLUMNS,
    Summary,
    aggregate,
    jobs_csv_text,
    metrics_csv_text,
    read_jobs_csv,
    summarize,
    write_jobs_csv,
    write_metrics_csv,
)
from hpcbundle.simcluster import SimConfig, Simulation


def run_sim(n_jobs=4, seed=0):
    jobs = [
        JobSpec(
            job_id=f"J{i}", test_id=f"T{i}", model_id="M",
            cores=1 + i % 3, requested_minutes=30,
            true_runtime_minutes=10 + 5 * i, arrival_minute=0,
        )
        for i in range(n_jobs)
    ]
    sim = Simulation(
        [ExecutionSite("S1", 6, 1000)],
        jobs,
        BundlePolicy(min_jobs=2, min_fill=0.0, timeout_buffer_minutes=0),
        SimConfig(seed=seed, grace_minutes=5),
    )
    return sim.run()


@pytest.fixture(scope="module")
def report():
    return run_sim()


class TestCsvTables:
    def test_metrics_header_and_rows(self, report):
        lines = metrics_csv_text(report.dispatcher).splitlines()
        assert lines[0] == ",".join(METRICS_COLUMNS)
        assert len(lines) == 1 + len(report.dispatcher.bundle_reports)
        first = dict(zip(METRICS_COLUMNS, lines[1].split(",")))
        assert first["bundle_id"] == "B00001"
        assert first["site_id"] == "S1"
        assert 0.0 <= float(first["waste_fraction"]) < 1.0
        counts = sum(
            int(first[c])
            for c in ("n_completed", "n_timeout", "n_node_fault",
                      "n_cancelled", "n_failed")
        )
        assert counts == int(first["n_jobs"])

    def test_jobs_header_and_rows(self, report):
        lines = jobs_csv_text(report.dispatcher).splitlines()
        assert lines[0] == ",".join(JOBS_COLUMNS)
        assert len(lines) == 5
        rows = [dict(zip(JOBS_COLUMNS, line.split(","))) for line in lines[1:]]
        assert [r["job_id"] for r in rows] == ["J0", "J1", "J2", "J3"]
        for row in rows:
            assert row["state"] == "completed"
            assert int(row["turnaround_minutes"]) > 0

    def test_write_round_trip(self, report, tmp_path):
        jobs_path = tmp_path / "jobs.csv"
        write_jobs_csv(jobs_path, report.dispatcher)
        assert jobs_path.read_text() == jobs_csv_text(report.dispatcher)
        rows = read_jobs_csv(jobs_path)
        assert len(rows) == 4
        assert rows[0]["job_id"] == "J0"
        metrics_path = tmp_path / "metrics.csv"
        write_metrics_csv(metrics_path, report.dispatcher)
        assert metrics_path.read_text() == metrics_csv_text(report.dispatcher)

    def test_read_rejects_wrong_schema(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("job_id,state\na,completed\n")
        with pytest.raises(ValueError, match="expected columns"):
            read_jobs_csv(bad)


class TestSummarize:
    def test_counts_match_run(self, report):
        summary = summarize(report.dispatcher)
        assert summary.n_jobs == 4
        assert summary.n_completed == 4
        assert summary.n_errored == 0
        assert summary.n_live == 0
        assert summary.n_bundles == len(report.dispatcher.bundle_reports)
        assert summary.bundles_per_site == {"S1": summary.n_bundles}
        assert summary.mean_turnaround > 0
        assert summary.p95_turnaround >= summary.mean_turnaround
        assert summary.core_minutes_requested >= summary.core_minutes_consumed > 0

    def test_render_is_stable_text(self, report):
        text = summarize(report.dispatcher).render()
        assert "jobs            4" in text
        assert "completed     4" in text
        assert "S1" in text
        assert text == summarize(report.dispatcher).render()

    def test_empty_dispatcher(self):
        sim = Simulation(
            [ExecutionSite("S1", 6, 1000)], [], BundlePolicy(), SimConfig()
        )
        sim.run()
        summary = summarize(sim.dispatcher)
        assert summary == Summary()


class TestAggregate:
    def write_run(self, tmp_path, name, seed):
        report = run_sim(seed=seed)
        path = tmp_path / name
        write_jobs_csv(path, report.dispatcher)
        return report, path

    def test_single_table_matches_summary_job_fields(self, tmp_path):
        report, path = self.write_run(tmp_path, "run.csv", 0)
        pooled = aggregate([path])
        direct = summarize(report.dispatcher)
        assert pooled.n_jobs == direct.n_jobs
        assert pooled.n_completed == direct.n_completed
        assert pooled.mean_turnaround == direct.mean_turnaround
        assert pooled.p95_turnaround == direct.p95_turnaround
        assert pooled.n_bundles == 0  # jobs tables carry no bundle data

    def test_pooling_two_identical_runs_doubles_counts(self, tmp_path):
        _, first = self.write_run(tmp_path, "a.csv", 3)
        _, second = self.write_run(tmp_path, "b.csv", 3)
        one = aggregate([first])
        two = aggregate([first, second])
        assert two.n_jobs == 2 * one.n_jobs
        assert two.n_completed == 2 * one.n_completed
        assert two.mean_turnaround == one.mean_turnaround

    def test_requires_at_least_one_path(self):
        with pytest.raises(ValueError):
            aggregate([])
