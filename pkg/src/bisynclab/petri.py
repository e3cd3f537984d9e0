"""Dual-diamond Petri net of the bilateral register swap.

The net is loaded from a line-oriented definition file (see
``data/dual_diamond.net``) and analysed by exhaustive breadth-first
reachability.  Everything here is pure: nets and markings are immutable.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

AGENTS = ("Alice", "Bob")
OWNERS = AGENTS + ("Shared",)
KINDS = ("EPI", "ONT")
ROLES = ("diamond", "heartbeat")

DEFAULT_STATE_CEILING = 10**6


class NetError(Exception):
    """Base class for Petri net errors."""


class StructuralError(NetError):
    """Malformed net or a marking that does not fit the net."""


class NotEnabledError(NetError):
    """Attempt to fire a transition whose inputs are not marked."""


class CapacityError(NetError):
    """Firing would exceed the per-place capacity (net-design error)."""


class AnalysisError(NetError):
    """Reachability exceeded its state ceiling."""


@dataclass(frozen=True)
class Place:
    id: str
    owner: str
    kind: str


@dataclass(frozen=True)
class Transition:
    id: str
    controller: str
    role: str
    inputs: tuple[tuple[str, int], ...]
    outputs: tuple[tuple[str, int], ...]

    def delta(self) -> dict[str, int]:
        d: dict[str, int] = {}
        for p, k in self.inputs:
            d[p] = d.get(p, 0) - k
        for p, k in self.outputs:
            d[p] = d.get(p, 0) + k
        return d


class Marking(Mapping[str, int]):
    """Immutable place -> token-count map."""

    __slots__ = ("_items", "_hash")

    def __init__(self, tokens: Mapping[str, int] | Iterable[tuple[str, int]]):
        items = dict(tokens)
        for p, k in items.items():
            if not isinstance(k, int) or k < 0:
                raise StructuralError(f"place {p!r} has invalid count {k!r}")
        self._items = tuple(sorted(items.items()))
        self._hash = hash(self._items)

    def __getitem__(self, key: str) -> int:
        for p, k in self._items:
            if p == key:
                return k
        raise KeyError(key)

    def __iter__(self) -> Iterator[str]:
        return (p for p, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Marking):
            return self._items == other._items
        return NotImplemented

    def __repr__(self) -> str:
        marked = " ".join(p if k == 1 else f"{p}*{k}" for p, k in self._items if k)
        return f"Marking({marked})"

    def marked(self) -> frozenset[str]:
        return frozenset(p for p, k in self._items if k)

    def digest(self) -> str:
        text = ",".join(f"{p}={k}" for p, k in self._items)
        return hashlib.sha1(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class PetriNet:
    name: str
    places: tuple[Place, ...]
    transitions: tuple[Transition, ...]
    initial: Marking
    ownership: tuple[str, ...]
    registers: tuple[str, ...] = ()
    heartbeat: tuple[str, ...] = ()
    mirror: tuple[tuple[str, str], ...] = ()
    capacity: int = 1
    _tindex: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = [p.id for p in self.places]
        if len(set(ids)) != len(ids):
            raise StructuralError("duplicate place id")
        tids = [t.id for t in self.transitions]
        if len(set(tids)) != len(tids):
            raise StructuralError("duplicate transition id")
        known = set(ids)
        for p in self.places:
            if p.owner not in OWNERS or p.kind not in KINDS:
                raise StructuralError(f"place {p.id}: bad owner/kind")
        for t in self.transitions:
            if not t.inputs or not t.outputs:
                raise StructuralError(f"transition {t.id} needs inputs and outputs")
            if t.controller not in AGENTS:
                raise StructuralError(f"transition {t.id}: controller must be Alice or Bob")
            for p, k in t.inputs + t.outputs:
                if p not in known or k < 1:
                    raise StructuralError(f"transition {t.id}: bad arc {p}:{k}")
        for group in (self.ownership, self.registers, self.heartbeat):
            if not set(group) <= known:
                raise StructuralError(f"unknown place in {group}")
        if set(self.initial) != known:
            raise StructuralError("initial marking must cover exactly the net's places")
        self._tindex.update({t.id: t for t in self.transitions})

    @property
    def place_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.places)

    def transition(self, tid: str) -> Transition:
        try:
            return self._tindex[tid]
        except KeyError:
            raise StructuralError(f"unknown transition {tid!r}") from None

    def place(self, pid: str) -> Place:
        for p in self.places:
            if p.id == pid:
                return p
        raise StructuralError(f"unknown place {pid!r}")

    def marking(self, marked: Iterable[str] = ()) -> Marking:
        """Build a 0/1 marking from the set of marked place ids."""
        marked = set(marked)
        if not marked <= set(self.place_ids):
            raise StructuralError(f"unknown places {sorted(marked - set(self.place_ids))}")
        return Marking({p: int(p in marked) for p in self.place_ids})

    def is_boundary(self, m: Marking) -> bool:
        return not any(m[p] for p in self.heartbeat)

    def register_pattern(self, m: Marking) -> tuple[bool, ...]:
        return tuple(bool(m[p]) for p in self.registers)

    def ownership_total(self, m: Marking) -> int:
        return sum(m[p] for p in self.ownership)


def _check_marking(net: PetriNet, m: Marking) -> None:
    if set(m) != set(net.place_ids):
        extra = sorted(set(m) - set(net.place_ids))
        missing = sorted(set(net.place_ids) - set(m))
        raise StructuralError(f"marking does not fit net (unknown={extra}, missing={missing})")


def enabled(net: PetriNet, m: Marking) -> frozenset[str]:
    _check_marking(net, m)
    return frozenset(
        t.id for t in net.transitions if all(m[p] >= k for p, k in t.inputs)
    )


def fire(net: PetriNet, m: Marking, tid: str) -> Marking:
    _check_marking(net, m)
    t = net.transition(tid)
    if not all(m[p] >= k for p, k in t.inputs):
        raise NotEnabledError(f"{tid} is not enabled in {m!r}")
    tokens = dict(m)
    for p, k in t.delta().items():
        tokens[p] += k
        if tokens[p] > net.capacity:
            raise CapacityError(f"firing {tid} puts {tokens[p]} tokens on {p}")
    return Marking(tokens)


@dataclass(frozen=True)
class ReachabilityGraph:
    nodes: tuple[Marking, ...]
    edges: tuple[tuple[int, str, int], ...]

    def index(self, m: Marking) -> int:
        return self.nodes.index(m)


def reachability(net: PetriNet, ceiling: int = DEFAULT_STATE_CEILING) -> ReachabilityGraph:
    """Breadth-first closure from the initial marking.

    Transitions are tried in declaration order so node numbering is stable.
    """
    index = {net.initial: 0}
    nodes = [net.initial]
    edges = []
    queue = deque([net.initial])
    while queue:
        m = queue.popleft()
        src = index[m]
        en = enabled(net, m)
        for t in net.transitions:
            if t.id not in en:
                continue
            m2 = fire(net, m, t.id)
            if m2 not in index:
                if len(nodes) >= ceiling:
                    raise AnalysisError(
                        f"more than {ceiling} reachable markings; not the intended 8-state net"
                    )
                index[m2] = len(nodes)
                nodes.append(m2)
                queue.append(m2)
            edges.append((src, t.id, index[m2]))
    return ReachabilityGraph(tuple(nodes), tuple(edges))


@dataclass(frozen=True)
class ConservationReport:
    passed: bool
    initial_total: int
    totals: tuple[tuple[str, int], ...]
    violations: tuple[Marking, ...]


def check_ownership_conservation(
    net: PetriNet, graph: ReachabilityGraph | None = None
) -> ConservationReport:
    if graph is None:
        graph = reachability(net)
    base = net.ownership_total(net.initial)
    totals = tuple((m.digest(), net.ownership_total(m)) for m in graph.nodes)
    bad = tuple(m for m in graph.nodes if net.ownership_total(m) != base)
    return ConservationReport(not bad, base, totals, bad)


@dataclass(frozen=True)
class DichotomyReport:
    passed: bool
    boundary: tuple[tuple[Marking, tuple[bool, ...]], ...]
    violations: tuple[Marking, ...]


def check_boundary_dichotomy(
    net: PetriNet, graph: ReachabilityGraph | None = None
) -> DichotomyReport:
    """Every boundary marking must hold the message in all registers or none."""
    if graph is None:
        graph = reachability(net)
    rows = []
    bad = []
    for m in graph.nodes:
        if not net.is_boundary(m):
            continue
        pattern = net.register_pattern(m)
        rows.append((m, pattern))
        if len(set(pattern)) > 1:
            bad.append(m)
    return DichotomyReport(not bad, tuple(rows), tuple(bad))


# -- symmetry -------------------------------------------------------------

def mirror_map(net: PetriNet) -> dict[str, str]:
    """The Alice<->Bob relabeling as an involution on place and transition ids."""
    mp: dict[str, str] = {}
    for a, b in net.mirror:
        if a in mp or b in mp:
            raise StructuralError(f"id mirrored twice: {a}/{b}")
        mp[a], mp[b] = b, a
    return mp


_SWAP_AGENT = {"Alice": "Bob", "Bob": "Alice", "Shared": "Shared"}


def _arcs(arcs: Iterable[tuple[str, int]], mp: Mapping[str, str]) -> frozenset:
    return frozenset((mp.get(p, p), k) for p, k in arcs)


def is_symmetric(net: PetriNet, graph: ReachabilityGraph | None = None) -> bool:
    """True iff the mirror map is an automorphism of the net and of its reachability graph."""
    mp = mirror_map(net)
    all_ids = set(net.place_ids) | {t.id for t in net.transitions}
    if set(mp) - all_ids:
        return False
    for p in net.places:
        q = mp.get(p.id, p.id)
        if q not in net.place_ids:
            return False
        other = net.place(q)
        if other.owner != _SWAP_AGENT[p.owner] or other.kind != p.kind:
            return False
        if net.initial[p.id] != net.initial[q]:
            return False
    for t in net.transitions:
        if t.id not in mp:
            return False
        u = net.transition(mp[t.id])
        if u.controller != _SWAP_AGENT[t.controller] or u.role != t.role:
            return False
        if _arcs(t.inputs, mp) != frozenset(u.inputs) or _arcs(t.outputs, mp) != frozenset(u.outputs):
            return False
    for group in (net.ownership, net.registers, net.heartbeat):
        if {mp.get(p, p) for p in group} != set(group):
            return False
    if graph is None:
        graph = reachability(net)

    def image(m: Marking) -> Marking:
        return Marking({mp.get(p, p): k for p, k in m.items()})

    nodes = set(graph.nodes)
    edges = {(graph.nodes[i], t, graph.nodes[j]) for i, t, j in graph.edges}
    return all(image(m) in nodes for m in nodes) and all(
        (image(a), mp[t], image(b)) in edges for a, t, b in edges
    )


# -- whole-net verification --------------------------------------------------

EXPECTED_TRANSITIONS = 16
EXPECTED_STATES = 8
PLACES_PER_AGENT = 3
DIAMOND_PER_AGENT = 3


@dataclass(frozen=True)
class NetReport:
    checks: tuple[tuple[str, bool, str], ...]
    graph: ReachabilityGraph | None

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failed(self) -> list[str]:
        return [name for name, ok, _ in self.checks if not ok]


def verify_net(net: PetriNet) -> NetReport:
    """Run every structural and reachability property of the dual-diamond contract."""
    checks = []

    def add(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    n_t = len(net.transitions)
    add("transition_count", n_t == EXPECTED_TRANSITIONS, f"{n_t} transitions")
    for agent in AGENTS:
        n_p = sum(p.owner == agent for p in net.places)
        n_d = sum(t.controller == agent and t.role == "diamond" for t in net.transitions)
        add(f"{agent}_places", n_p == PLACES_PER_AGENT, f"{n_p} places")
        add(f"{agent}_diamond", n_d == DIAMOND_PER_AGENT, f"{n_d} diamond transitions")
    try:
        graph = reachability(net)
    except (CapacityError, AnalysisError) as exc:
        add("safety", False, str(exc))
        return NetReport(tuple(checks), None)
    add("state_count", len(graph.nodes) == EXPECTED_STATES, f"{len(graph.nodes)} states")
    add("safety", all(max(m.values()) <= 1 for m in graph.nodes), "1-safe")
    fired = {t for _, t, _ in graph.edges}
    dead = sorted({t.id for t in net.transitions} - fired)
    add("no_dead_transitions", not dead, ",".join(dead))
    cons = check_ownership_conservation(net, graph)
    add("ownership_conservation", cons.passed, f"{len(cons.violations)} violating markings")
    dich = check_boundary_dichotomy(net, graph)
    add(
        "boundary_dichotomy",
        dich.passed and len(dich.boundary) > 0,
        f"{len(dich.boundary)} boundary markings, {len(dich.violations)} mixed",
    )
    add("symmetry", is_symmetric(net, graph), "Alice<->Bob automorphism")
    return NetReport(tuple(checks), graph)


def without_transition(net: PetriNet, tid: str) -> PetriNet:
    """Mutant with one transition deleted (mirror pairs mentioning it are dropped)."""
    net.transition(tid)
    return replace(
        net,
        transitions=tuple(t for t in net.transitions if t.id != tid),
        mirror=tuple(pair for pair in net.mirror if tid not in pair),
    )


def with_transition(net: PetriNet, t: Transition) -> PetriNet:
    """Replace (or add) a transition by id."""
    ts = [u for u in net.transitions if u.id != t.id]
    pos = next((i for i, u in enumerate(net.transitions) if u.id == t.id), len(ts))
    ts.insert(pos, t)
    return replace(net, transitions=tuple(ts))


# -- net-definition file ------------------------------------------------------

def _fmt_arcs(arcs):
    return " ".join(f"{p}:{k}" for p, k in arcs)


def _parse_arcs(text, lineno):
    arcs = []
    for tok in text.split():
        name, sep, mult = tok.rpartition(":")
        if not sep or not name:
            raise StructuralError(f"line {lineno}: arc {tok!r} needs place:multiplicity")
        try:
            arcs.append((name, int(mult)))
        except ValueError:
            raise StructuralError(f"line {lineno}: bad multiplicity in {tok!r}") from None
    return tuple(arcs)


def format_net(net: PetriNet) -> str:
    lines = [f"net {net.name}", f"capacity {net.capacity}"]
    for p in net.places:
        lines.append(f"place {p.id} {p.owner} {p.kind} {net.initial[p.id]}")
    for t in net.transitions:
        lines.append(
            f"transition {t.id} {t.controller} {t.role} : "
            f"{_fmt_arcs(t.inputs)} -> {_fmt_arcs(t.outputs)}"
        )
    for key in ("ownership", "registers", "heartbeat"):
        ids = getattr(net, key)
        if ids:
            lines.append(f"{key} " + " ".join(ids))
    for a, b in net.mirror:
        lines.append(f"mirror {a} {b}")
    return "\n".join(lines) + "\n"


def parse_net(text: str) -> PetriNet:
    name = None
    capacity = 1
    places, initial, transitions, mirror = [], {}, [], []
    groups = {"ownership": (), "registers": (), "heartbeat": ()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "net":
            name = rest.strip()
        elif head == "capacity":
            capacity = int(rest)
        elif head == "place":
            parts = rest.split()
            if len(parts) != 4:
                raise StructuralError(f"line {lineno}: place <id> <owner> <kind> <tokens>")
            pid, owner, kind, tokens = parts
            places.append(Place(pid, owner, kind))
            initial[pid] = int(tokens)
        elif head == "transition":
            sig, colon, arcs = rest.partition(":")
            parts = sig.split()
            if not colon or len(parts) != 3 or "->" not in arcs:
                raise StructuralError(
                    f"line {lineno}: transition <id> <controller> <role> : <in> -> <out>"
                )
            tid, controller, role = parts
            ins, _, outs = arcs.partition("->")
            transitions.append(
                Transition(tid, controller, role, _parse_arcs(ins, lineno), _parse_arcs(outs, lineno))
            )
        elif head in groups:
            groups[head] = tuple(rest.split())
        elif head == "mirror":
            parts = rest.split()
            if len(parts) != 2:
                raise StructuralError(f"line {lineno}: mirror <id> <id>")
            mirror.append((parts[0], parts[1]))
        else:
            raise StructuralError(f"line {lineno}: unknown directive {head!r}")
    if name is None:
        raise StructuralError("missing 'net <name>' line")
    return PetriNet(
        name=name,
        places=tuple(places),
        transitions=tuple(transitions),
        initial=Marking(initial),
        ownership=groups["ownership"],
        registers=groups["registers"],
        heartbeat=groups["heartbeat"],
        mirror=tuple(mirror),
        capacity=capacity,
    )


def load_net(path: str | Path) -> PetriNet:
    return parse_net(Path(path).read_text())


def build_dual_diamond() -> PetriNet:
    text = resources.files("bisynclab.data").joinpath("dual_diamond.net").read_text()
    return parse_net(text)


def reach_records(graph: ReachabilityGraph) -> list[str]:
    """Line-delimited (marking-hash, transition-id, marking-hash) records."""
    return [
        f"{graph.nodes[i].digest()} {t} {graph.nodes[j].digest()}" for i, t, j in graph.edges
    ]
