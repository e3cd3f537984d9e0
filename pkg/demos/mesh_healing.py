"""
Healing a king-graph mesh
=========================

Count spanning trees, cut tree edges one at a time and watch each cell swap
to a pre-planned alternate parent at the next slot boundary.
"""

from bisynclab.mesh import (
    build_mesh,
    clos_baseline,
    count_spanning_trees,
    observer_visibility,
    parse_failure_script,
    plan_root_tree,
    simulate_failures,
)

for n in (2, 3, 4, 5):
    print(f"{n}x{n}: {count_spanning_trees(build_mesh(n))} spanning trees")

mesh = build_mesh(4)
tree = plan_root_tree(mesh, 5)
print("alternates of cell 15:", tree.alternates[15])

script = parse_failure_script("""
1000 5 10 Down
1010 10 15 Down
5000 5 10 Up
""")
run = simulate_failures(mesh, 5, script, delta_ns=123)
print("\n".join(run.trace_lines()))

for poll in (100, 124, 1_000_000):
    rep = observer_visibility(run, poll)
    print(f"poll {poll} ns: visible={rep.any_visible}")
print("routing reconvergence 50 ms, poll 1 ms:",
      clos_baseline(50_000_000, run, 1_000_000).entries[0].min_polls, "polls see it")
