"""
One slot, every fault
=====================

Delta comes from the cable and line rate. Each slot either commits at both
ends or aborts at both ends, whatever goes wrong inside it.
"""

from collections import Counter

from bisynclab.link import (
    LinkEngine,
    LinkParams,
    Message,
    RegisterPair,
    compute_delta,
    fault_sweep,
    simulate_slot,
)

params = LinkParams(cable_length=2, propagation_velocity=5, frame_size=512, line_rate=10**10)
print("delta:", compute_delta(params).nanoseconds, "ns")

patterns = Counter()
for fault in fault_sweep():
    rec = simulate_slot(RegisterPair(), Message(1, b"a"), Message(2, b"b"), fault)
    a, b = rec.views
    assert a.outcome is b.outcome
    patterns[(rec.outcome.tag.name, rec.pair.pattern())] += 1
print(dict(patterns))

# a longer run with a small buffer: refusals are counted, nothing vanishes
eng = LinkEngine(params, buffer_capacity=2)
for k in range(200):
    eng.step(Message(k), Message(k), fault_sweep()[k % 97] if k % 5 == 0 else None)
    eng.dead.clear()
    if k % 3:
        eng.drain("a")
        eng.drain("b")
print(eng.accounting())
