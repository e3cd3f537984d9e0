"""
Keeping a read/write protocol undecided
=======================================

The adversary picks, at every step, a move that leaves both decisions
reachable. Under asynchrony it never runs out of such moves. With a slot
boundary on every step it has nothing to pick from.
"""

from bisynclab.link import Delta
from bisynclab.timing import (
    Asynchronous,
    Bisynchronous,
    ValenceOracle,
    classify_valence,
    find_bivalent_run,
    initial_configuration,
    shipped_protocol,
)

rw = shipped_protocol("rw_toy")
start = initial_configuration(rw, (0, 1))
print("start:", classify_valence(rw, start, 8).tag)
print("(0,0) start:", classify_valence(rw, initial_configuration(rw, (0, 0)), 8).tag)

run = find_bivalent_run(rw, Asynchronous(), 1000)
oracle = ValenceOracle(rw, Asynchronous())
tags = {oracle.classify(c, 8).tag for c in run.configurations}
print(f"async: {len(run)} steps, decisions seen {set().union(*(c.decisions() for c in run.configurations))}, valences {tags}")
print("first steps:", run.steps[:6])

print("bisync:", find_bivalent_run(rw, Bisynchronous(Delta(123)), 10))
