"""Derive on-node execution order from packing geometry.

Once jobs are packed, vertical position is a schedule: a job whose
rectangle sits entirely below another (with overlapping core columns)
must finish before the upper one may start, or the node would need more
cores than requested.  That "beneath" relation, transitively reduced,
becomes a makefile whose targets the node runs with ``make``.
"""

from hpcbundle import (
    PackingBin,
    ResourceRect,
    beneath_relation,
    emit_make,
    schedule_steps,
    step_graph,
    transitive_reduction,
)

JOBS = [("A", 3, 40), ("B", 3, 30), ("C", 6, 30), ("D", 2, 20), ("E", 3, 25)]


def main() -> None:
    bin_ = PackingBin(6, 100)
    members = [(name, bin_.insert(ResourceRect(c, m))) for name, c, m in JOBS]

    relation = beneath_relation(members)
    print("full beneath relation (below, above):")
    for pair in sorted(relation):
        print(f"  {pair[0]} -> {pair[1]}")

    graph = step_graph(members)
    print("\nafter transitive reduction:")
    for a, b in sorted(graph.edges):
        print(f"  {a} -> {b}")
    print(f"roots (start immediately): {', '.join(graph.roots())}")

    # The same reduction is available on bare node/relation data.
    assert graph.edges == transitive_reduction(graph.nodes, relation).edges

    print("\nemitted makefile:\n")
    print(emit_make(graph, lambda job_id: f"run-kim-job {job_id}"))

    # Schedule the steps assuming each runs exactly its packed height.
    durations = {name: minutes for name, _, minutes in JOBS}
    print("nominal timeline (start, end):")
    for name, window in sorted(schedule_steps(graph, durations).items()):
        print(f"  {name}: {window}")
    print("\nA and B share no cores, so they run side by side; C needs the")
    print("full node and waits for both; D and E then share it above C.")


if __name__ == "__main__":
    main()
