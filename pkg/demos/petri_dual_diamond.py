"""
The dual-diamond net
====================

Build the shipped net, walk its reachability graph and check each property.
"""

from bisynclab.petri import build_dual_diamond, verify_net, without_transition

net = build_dual_diamond()
report = verify_net(net)

print(f"{len(net.transitions)} transitions, {len(report.graph.nodes)} reachable markings")
for name, ok, detail in report.checks:
    print(f"  {'ok  ' if ok else 'FAIL'} {name:24s} {detail}")

# every boundary marking holds the message in all registers or in none
for m in report.graph.nodes:
    if net.is_boundary(m):
        print("boundary", sorted(m.marked()), net.register_pattern(m))

# drop one transition and the contract breaks
broken = verify_net(without_transition(net, net.transitions[0].id))
print("after removing", net.transitions[0].id, "->", broken.failed())
