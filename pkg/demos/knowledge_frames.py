"""
Who knows what, and when
========================

Common knowledge at every slot boundary under the bisynchronous link;
nowhere at all when delivery is only eventual.
"""

from bisynclab.knowledge import summarize, sync_traces, evaluate_knowledge
from bisynclab.timing import Asynchronous, Bisynchronous, Synchronous

for model, kw in [(Bisynchronous(), {}), (Asynchronous(), {"every_index": True}), (Synchronous(3), {})]:
    s = summarize(model, **kw)
    print(type(model).__name__, s)

# the bounded-delay sender: the receiver knows, the sender can only hope
traces = sync_traces(2)
intact = next(tr for tr in traces if tr.label == "d=2,intact")
print(evaluate_knowledge(Synchronous(2), intact, 2, traces))
