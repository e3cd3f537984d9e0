"""Per-agent knowledge over finite trace sets.

A trace is a sequence of global states; a global state is a set of
``((owner, component), value)`` entries.  An agent sees exactly the components
it owns.  Knowledge is evaluated on the Kripke frame whose worlds are
``(trace, index)`` pairs: two worlds are indistinguishable to an agent when the
agent's view history up to that point is the same.  Clocked models compare
histories index by index; the asynchronous model has no shared clock, so
histories are compared after removing stutter and at any index.

Every fact here is boolean and "knowing" means knowing *whether* it holds.
Common knowledge holds at a world iff the fact is constant on the world's
connected component of the union of both agents' indistinguishability
relations, which is the greatest fixpoint of mutual knowledge on a finite frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Hashable, Iterable, Mapping, Optional, Sequence

from .link import (
    DEFAULT_TICKS,
    FaultSpec,
    Message,
    Outcome,
    RegisterPair,
    fault_sweep,
    simulate_slot,
)
from .timing import Asynchronous, Bisynchronous, Synchronous, TimingModel

AGENTS = ("a", "b")
DEFAULT_TRACE_CEILING = 200_000

GlobalState = tuple  # sorted tuple of ((owner, component), value)


class KnowledgeError(Exception):
    pass


class AnalysisError(KnowledgeError):
    pass


def global_state(components: Mapping[tuple[str, str], Hashable]) -> GlobalState:
    return tuple(sorted(components.items(), key=lambda kv: (kv[0], repr(kv[1]))))


@dataclass(frozen=True)
class Trace:
    states: tuple[GlobalState, ...]
    facts: tuple[bool, ...]  # the tracked fact at each index
    boundaries: frozenset = frozenset()
    label: str = ""

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class AgentView:
    agent: str
    visible: tuple

    def get(self, component: str, default=None):
        for name, value in self.visible:
            if name == component:
                return value
        return default


@dataclass(frozen=True)
class EpistemicState:
    knows_own_outcome: tuple[bool, bool]
    knows_peer_knows: tuple[bool, bool]
    common_knowledge: bool
    at_boundary: bool = True

    @property
    def asymmetric(self) -> bool:
        return self.knows_own_outcome[0] != self.knows_own_outcome[1]

    def chain_holds(self) -> bool:
        """common knowledge => both know the peer knows => both know."""
        if self.common_knowledge and not all(self.knows_peer_knows):
            return False
        if all(self.knows_peer_knows) and not all(self.knows_own_outcome):
            return False
        return True

    def record(self) -> dict:
        return {
            "knows_own_outcome": list(self.knows_own_outcome),
            "knows_peer_knows": list(self.knows_peer_knows),
            "common_knowledge": self.common_knowledge,
            "asymmetric": self.asymmetric,
        }


def observe(agent: str, trace: Trace, index: int) -> AgentView:
    if agent not in AGENTS:
        raise KnowledgeError(f"unknown agent {agent!r}")
    if not 0 <= index < len(trace):
        raise IndexError(f"index {index} outside trace of length {len(trace)}")
    own = tuple((name, value) for (owner, name), value in trace.states[index] if owner == agent)
    return AgentView(agent, own)


def _destutter(seq):
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return tuple(out)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[max(rx, ry)] = min(rx, ry)


class KripkeFrame:
    """All worlds of a finite trace set with both agents' partitions."""

    def __init__(self, traces: Sequence[Trace], clocked: bool, ceiling: int = DEFAULT_TRACE_CEILING):
        if len(traces) > ceiling:
            raise AnalysisError(f"{len(traces)} traces exceed the ceiling {ceiling}")
        self.traces = list(traces)
        self.clocked = clocked
        self.worlds = [(t, i) for t, tr in enumerate(self.traces) for i in range(len(tr))]
        self.index = {w: k for k, w in enumerate(self.worlds)}
        self.fact = [self.traces[t].facts[i] for t, i in self.worlds]
        self.cls = {ag: [None] * len(self.worlds) for ag in AGENTS}
        self.members = {ag: {} for ag in AGENTS}
        for ag in AGENTS:
            for t, tr in enumerate(self.traces):
                hist = []
                for i in range(len(tr)):
                    hist.append(observe(ag, tr, i).visible)
                    key = (i, tuple(hist)) if clocked else _destutter(hist)
                    k = self.index[(t, i)]
                    self.cls[ag][k] = key
                    self.members[ag].setdefault(key, []).append(k)
        # knows-whether per agent per class
        self.knows = {ag: {} for ag in AGENTS}
        for ag in AGENTS:
            for key, ws in self.members[ag].items():
                vals = {self.fact[k] for k in ws}
                self.knows[ag][key] = len(vals) == 1
        self.peer_knows = {ag: {} for ag in AGENTS}
        for ag in AGENTS:
            peer = "b" if ag == "a" else "a"
            for key, ws in self.members[ag].items():
                self.peer_knows[ag][key] = all(self.knows_whether(peer, k) for k in ws)
        uf = _UnionFind(len(self.worlds))
        for ag in AGENTS:
            for ws in self.members[ag].values():
                for k in ws[1:]:
                    uf.union(ws[0], k)
        comp_facts: dict = {}
        for k in range(len(self.worlds)):
            comp_facts.setdefault(uf.find(k), set()).add(self.fact[k])
        self.ck = [len(comp_facts[uf.find(k)]) == 1 for k in range(len(self.worlds))]

    def knows_whether(self, agent: str, world: int) -> bool:
        return self.knows[agent][self.cls[agent][world]]

    def knows_peer_knows(self, agent: str, world: int) -> bool:
        return self.peer_knows[agent][self.cls[agent][world]]

    def state_at(self, trace: int, index: int) -> EpistemicState:
        k = self.index[(trace, index)]
        return EpistemicState(
            knows_own_outcome=tuple(self.knows_whether(ag, k) for ag in AGENTS),
            knows_peer_knows=tuple(self.knows_peer_knows(ag, k) for ag in AGENTS),
            common_knowledge=self.ck[k],
            at_boundary=index in self.traces[trace].boundaries,
        )


def _is_clocked(model: TimingModel) -> bool:
    return not isinstance(model, Asynchronous)


def evaluate_knowledge(
    model: TimingModel,
    trace: Trace,
    boundary_index: int,
    trace_set: Optional[Sequence[Trace]] = None,
    frame: Optional[KripkeFrame] = None,
) -> EpistemicState:
    """Epistemic state at ``boundary_index`` of ``trace`` within its trace set.

    ``trace_set`` defaults to the canonical frame of ``model``; ``trace`` must be
    one of its members.
    """
    if frame is None:
        if trace_set is None:
            trace_set = canonical_traces(model)
        frame = KripkeFrame(trace_set, _is_clocked(model))
    if _is_clocked(model) and boundary_index not in trace.boundaries:
        raise KnowledgeError(f"index {boundary_index} is not a boundary of {trace.label or 'trace'}")
    try:
        t = frame.traces.index(trace)
    except ValueError:
        raise KnowledgeError("trace is not a member of the trace set") from None
    return frame.state_at(t, boundary_index)


# -- trace sets ---------------------------------------------------------------

def marking_state(net, marking) -> GlobalState:
    """Global state of a Petri-net marking; places owned by Alice/Bob go to a/b."""
    owner_of = {"Alice": "a", "Bob": "b"}
    comps = {}
    for p in net.places:
        owner = owner_of.get(p.owner, "shared")
        name = p.id.split(".", 1)[-1] if owner != "shared" else p.id
        comps[(owner, name)] = marking[p.id]
    return global_state(comps)


def net_trace(net, firing: Iterable[str]) -> Trace:
    """Trace of a firing sequence of the dual-diamond net; fact = registers full."""
    from .petri import fire

    m = net.initial
    markings = [m]
    for tid in firing:
        m = fire(net, m, tid)
        markings.append(m)
    states = tuple(marking_state(net, x) for x in markings)
    facts = tuple(all(net.register_pattern(x)) for x in markings)
    bounds = frozenset(i for i, x in enumerate(markings) if net.is_boundary(x))
    return Trace(states, facts, bounds)


def _view_payload(view) -> tuple:
    return (
        str(view.offered) if view.offered else None,
        tuple(o.value for o in view.observations),
        view.echo,
        str(view.register) if view.register else None,
    )


def slot_trace(offer_a, offer_b, fault: Optional[FaultSpec], ticks: int = DEFAULT_TICKS) -> Trace:
    """One slot as a two-state trace: the slot start and its boundary."""
    rec = simulate_slot(RegisterPair(), offer_a, offer_b, fault, ticks=ticks)
    va, vb = rec.views
    start = global_state({
        ("a", "offer"): str(offer_a) if offer_a else None,
        ("b", "offer"): str(offer_b) if offer_b else None,
    })
    end = global_state({
        ("a", "offer"): str(offer_a) if offer_a else None,
        ("b", "offer"): str(offer_b) if offer_b else None,
        ("a", "slot"): _view_payload(va),
        ("b", "slot"): _view_payload(vb),
        ("link", "fault"): str(fault) if fault else None,
    })
    committed = rec.outcome.tag is Outcome.COMMITTED
    return Trace((start, end), (False, committed), frozenset({1}), label=f"{fault or 'clean'}")


def bisync_traces(ticks: int = DEFAULT_TICKS) -> list[Trace]:
    """Every offer combination crossed with the full single-fault sweep."""
    offers = (None, Message(1))
    out = []
    for oa, ob in product(offers, offers):
        for fault in fault_sweep(ticks):
            out.append(slot_trace(oa, Message(2) if ob else None, fault, ticks))
    return out


def async_traces(depth: int = 12) -> list[Trace]:
    """A sends one message; every receipt is acknowledged by a fresh message.

    Exactly one message is in flight at any time, and each step either
    delivers it or lets it wait.  Fact: A's first message has been delivered.
    """
    out = []
    for choices in product((False, True), repeat=depth):
        sent = {"a": 1, "b": 0}
        recv = {"a": 0, "b": 0}
        holder = "b"  # destination of the in-flight message
        states, facts = [], []

        def snap():
            states.append(global_state({
                ("a", "sent"): sent["a"], ("a", "recv"): recv["a"],
                ("b", "sent"): sent["b"], ("b", "recv"): recv["b"],
            }))
            facts.append(recv["b"] > 0)

        snap()
        for deliver in choices:
            if deliver:
                recv[holder] += 1
                sent[holder] += 1
                holder = "a" if holder == "b" else "b"
            snap()
        out.append(Trace(tuple(states), tuple(facts), frozenset(range(depth + 1)),
                         label="".join("d" if c else "." for c in choices)))
    return out


def sync_traces(bound: int) -> list[Trace]:
    """A frame sent at index 0 arrives at some d in 1..bound, intact or corrupted.

    Fact: the receiver committed the frame.  The boundary is index ``bound``.
    """
    out = []
    for d in range(1, bound + 1):
        for intact in (True, False):
            states, facts = [], []
            for i in range(bound + 1):
                arrived = i >= d
                committed = arrived and intact
                states.append(global_state({
                    ("a", "sent"): True,
                    ("b", "arrived"): arrived,
                    ("b", "committed"): committed,
                }))
                facts.append(committed)
            out.append(Trace(tuple(states), tuple(facts), frozenset({bound}),
                             label=f"d={d},{'intact' if intact else 'corrupt'}"))
    return out


def canonical_traces(model: TimingModel, depth: int = 12) -> list[Trace]:
    if isinstance(model, Bisynchronous):
        return bisync_traces()
    if isinstance(model, Synchronous):
        return sync_traces(model.bound)
    return async_traces(depth)


@dataclass(frozen=True)
class KnowledgeSummary:
    model: str
    worlds: int
    evaluated: int
    common_knowledge: int
    asymmetric: int
    chain_violations: int

    @property
    def ck_fraction(self) -> float:
        return self.common_knowledge / self.evaluated if self.evaluated else 0.0


def summarize(model: TimingModel, traces: Optional[Sequence[Trace]] = None,
              every_index: bool = False) -> KnowledgeSummary:
    """Tally epistemic flags over boundaries (or every index) of a trace set."""
    traces = canonical_traces(model) if traces is None else list(traces)
    frame = KripkeFrame(traces, _is_clocked(model))
    n = ck = asym = bad = 0
    for t, tr in enumerate(frame.traces):
        idx = range(len(tr)) if every_index else sorted(tr.boundaries)
        for i in idx:
            s = frame.state_at(t, i)
            n += 1
            ck += s.common_knowledge
            asym += s.asymmetric
            bad += not s.chain_holds()
    return KnowledgeSummary(str(model), len(frame.worlds), n, ck, asym, bad)
