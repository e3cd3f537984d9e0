"""Timing models, schedulers and the bivalency adversary.

Protocols are table-driven deterministic automata for two processes.  A
configuration is the pair of process states plus the multiset of messages in
flight.  The scheduler's power depends on the timing model:

* ``Asynchronous``: any in-flight message may be delivered, at any time.
* ``Synchronous(bound)``: a message emitted at step k is delivered by step k+bound.
* ``Bisynchronous(delta)``: every step is a slot boundary that resolves all
  in-flight messages as reconciled deliveries, and silence is reported.

Time in this module counts scheduler steps; one bisynchronous slot is one step.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Hashable, Iterable, Optional, Union

from .link import Delta

DEFAULT_DEPTH = 8
DEFAULT_NODE_CEILING = 200_000


class TimingError(Exception):
    pass


class SchedulerViolation(TimingError):
    """A step the active timing model does not allow."""


class ProtocolFormatError(TimingError, ValueError):
    pass


class IrrevocabilityError(TimingError):
    """A protocol row tried to change an earlier decision."""


class AnalysisError(TimingError):
    def __init__(self, msg, stats=None):
        super().__init__(msg)
        self.stats = stats or {}


# -- timing models -------------------------------------------------------------

@dataclass(frozen=True)
class Asynchronous:
    clocked = False

    def __str__(self):
        return "asynchronous"


@dataclass(frozen=True)
class Synchronous:
    bound: int
    clocked = True

    def __post_init__(self):
        if self.bound <= 0:
            raise ValueError("synchronous bound must be positive")

    def __str__(self):
        return f"synchronous(bound={self.bound})"


@dataclass(frozen=True)
class Bisynchronous:
    delta: Delta = Delta(1)
    clocked = True

    def __str__(self):
        return f"bisynchronous(delta={self.delta.nanoseconds}ns)"


TimingModel = Union[Asynchronous, Synchronous, Bisynchronous]


def model_kind(model: TimingModel) -> str:
    return type(model).__name__.lower()


def check_requirement(protocol: "ProtocolSpec", model: TimingModel) -> None:
    """Raise SchedulerViolation if ``protocol`` declares a model other than ``model``."""
    if protocol.requires and protocol.requires != model_kind(model):
        raise SchedulerViolation(
            f"protocol {protocol.name} requires a {protocol.requires} model, got {model}"
        )


def model_from_dict(d: dict) -> TimingModel:
    kind = d.get("kind", "asynchronous")
    if kind == "asynchronous":
        return Asynchronous()
    if kind == "synchronous":
        return Synchronous(int(d["bound"]))
    if kind == "bisynchronous":
        return Bisynchronous(Delta(int(d.get("delta_ns", 1))))
    raise ValueError(f"unknown timing model {kind!r}")


# -- protocols -------------------------------------------------------------------

@dataclass(frozen=True)
class Reaction:
    state: str
    emit: Optional[str] = None
    decide: Optional[int] = None


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    n: int
    initial: dict  # (pid|"*", input) -> Reaction
    rows: dict  # (pid|"*", state, input pattern) -> Reaction
    requires: Optional[str] = None  # timing model the protocol depends on

    def start(self, pid: int, value: int) -> Reaction:
        for key in ((pid, value), ("*", value)):
            if key in self.initial:
                return self.initial[key]
        raise ProtocolFormatError(f"{self.name}: no init row for process {pid} input {value}")

    def react(self, pid: int, state: str, event: str) -> Optional[Reaction]:
        """Most specific matching row, or None (the event is ignored)."""
        kind = event.split(":", 1)[0]
        patterns = (event, f"{kind}:*", "*")
        for pat in patterns:
            for who in (pid, "*"):
                r = self.rows.get((who, state, pat))
                if r is not None:
                    return r
        return None


def _parse_reaction(tokens: list[str], where: str) -> Reaction:
    if not tokens:
        raise ProtocolFormatError(f"{where}: missing target state")
    state, rest = tokens[0], tokens[1:]
    emit = decide = None
    while rest:
        if len(rest) < 2:
            raise ProtocolFormatError(f"{where}: dangling {rest[0]!r}")
        key, val, rest = rest[0], rest[1], rest[2:]
        if key == "emit":
            emit = val
        elif key == "decide":
            decide = int(val)
        else:
            raise ProtocolFormatError(f"{where}: unknown clause {key!r}")
    return Reaction(state, emit, decide)


def _pid(tok: str, where: str):
    if tok == "*":
        return "*"
    try:
        return int(tok)
    except ValueError:
        raise ProtocolFormatError(f"{where}: bad process id {tok!r}") from None


def parse_protocol(text: str) -> ProtocolSpec:
    name, n, requires = None, 2, None
    initial, rows = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        toks = line.split()
        head = toks[0]
        if head == "protocol":
            name = toks[1]
        elif head == "processes":
            n = int(toks[1])
            if n != 2:
                raise ProtocolFormatError(f"{where}: only two-process protocols are supported")
        elif head == "requires":
            requires = toks[1]
            if requires not in ("asynchronous", "synchronous", "bisynchronous"):
                raise ProtocolFormatError(f"{where}: unknown timing model {requires!r}")
        elif head in ("init", "on"):
            if "->" not in toks:
                raise ProtocolFormatError(f"{where}: missing '->'")
            arrow = toks.index("->")
            lhs, rhs = toks[1:arrow], toks[arrow + 1:]
            reaction = _parse_reaction(rhs, where)
            if head == "init":
                if len(lhs) != 2:
                    raise ProtocolFormatError(f"{where}: init <pid|*> <input> -> ...")
                initial[(_pid(lhs[0], where), int(lhs[1]))] = reaction
            else:
                if len(lhs) != 3:
                    raise ProtocolFormatError(f"{where}: on <pid|*> <state> <input> -> ...")
                key = (_pid(lhs[0], where), lhs[1], lhs[2])
                if key in rows:
                    raise ProtocolFormatError(f"{where}: duplicate row {key}")
                rows[key] = reaction
        else:
            raise ProtocolFormatError(f"{where}: unknown directive {head!r}")
    if name is None:
        raise ProtocolFormatError("missing 'protocol <name>' line")
    return ProtocolSpec(name, n, initial, rows, requires)


def load_protocol(path: Union[str, Path]) -> ProtocolSpec:
    return parse_protocol(Path(path).read_text())


def shipped_protocol(name: str) -> ProtocolSpec:
    """Load one of the protocol fixtures bundled with the package."""
    text = resources.files("bisynclab.data").joinpath(f"{name}.proto").read_text()
    return parse_protocol(text)


# -- configurations ------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class InFlight:
    dest: int
    msg: str
    sent_at: int


@dataclass(frozen=True)
class ProcState:
    state: str
    decision: Optional[int] = None


@dataclass(frozen=True)
class Configuration:
    procs: tuple[ProcState, ...]
    in_flight: tuple[InFlight, ...] = ()
    crashed: frozenset = frozenset()
    time: int = 0

    def decisions(self) -> frozenset:
        return frozenset(p.decision for p in self.procs if p.decision is not None)

    def key(self, model: TimingModel) -> Hashable:
        """Identity for visited-set deduplication under ``model``."""
        states = tuple((p.state, p.decision) for p in self.procs)
        if isinstance(model, Synchronous):
            msgs = tuple(sorted((m.dest, m.msg, self.time - m.sent_at) for m in self.in_flight))
        else:
            msgs = tuple(sorted((m.dest, m.msg) for m in self.in_flight))
        return (states, msgs, tuple(sorted(self.crashed)))


def initial_configuration(protocol: ProtocolSpec, inputs: tuple[int, int]) -> Configuration:
    procs, flight = [], []
    for pid, value in enumerate(inputs):
        r = protocol.start(pid, value)
        procs.append(ProcState(r.state, r.decide))
        if r.emit is not None:
            flight.append(InFlight(1 - pid, r.emit, 0))
    return Configuration(tuple(procs), tuple(sorted(flight)))


# -- schedule steps --------------------------------------------------------------------

@dataclass(frozen=True)
class Deliver:
    dest: int
    msg: str

    def __str__(self):
        return f"deliver {self.msg} -> p{self.dest}"


@dataclass(frozen=True)
class Crash:
    pid: int

    def __str__(self):
        return f"crash p{self.pid}"


@dataclass(frozen=True)
class Delay:
    """Let one step of time pass with nothing delivered."""

    def __str__(self):
        return "delay"


@dataclass(frozen=True)
class Boundary:
    """Resolve every in-flight message at once (a slot boundary)."""

    def __str__(self):
        return "boundary"


Step = Union[Deliver, Crash, Delay, Boundary]


@dataclass(frozen=True)
class Schedule:
    steps: tuple[Step, ...]
    configurations: tuple[Configuration, ...] = field(default=(), compare=False)

    def __len__(self):
        return len(self.steps)

    def crash_count(self) -> int:
        return sum(isinstance(s, Crash) for s in self.steps)


def _apply(protocol, procs, pid, event, crashed):
    """Run one input event on process ``pid``; returns emitted InFlight-less (dest, msg)."""
    if pid in crashed:
        return procs, None
    p = procs[pid]
    r = protocol.react(pid, p.state, event)
    if r is None:
        return procs, None
    decision = p.decision
    if r.decide is not None:
        if decision is not None and decision != r.decide:
            raise IrrevocabilityError(
                f"p{pid} decided {decision} then tried to decide {r.decide}"
            )
        decision = r.decide
    procs = procs[:pid] + (ProcState(r.state, decision),) + procs[pid + 1:]
    return procs, (None if r.emit is None else (1 - pid, r.emit))


def _check_deadlines(model, c_after: Configuration) -> None:
    if isinstance(model, Asynchronous):
        return
    bound = model.bound if isinstance(model, Synchronous) else 1
    for m in c_after.in_flight:
        if m.dest in c_after.crashed:
            continue
        if c_after.time - m.sent_at >= bound:
            raise SchedulerViolation(
                f"{model}: message {m.msg} to p{m.dest} sent at {m.sent_at} "
                f"still undelivered at {c_after.time}"
            )


def schedule_step(
    protocol: ProtocolSpec,
    model: TimingModel,
    c: Configuration,
    choice: Step,
    crash_budget: int = 1,
) -> Configuration:
    """Deterministic successor of ``c`` under ``choice``; raises on model-illegal choices."""
    if isinstance(choice, Crash):
        if choice.pid in c.crashed or not 0 <= choice.pid < len(c.procs):
            raise SchedulerViolation(f"cannot crash p{choice.pid}")
        if len(c.crashed) >= crash_budget:
            raise SchedulerViolation(f"crash budget {crash_budget} exhausted")
        return replace(c, crashed=c.crashed | {choice.pid})

    if isinstance(model, Bisynchronous) and not isinstance(choice, Boundary):
        raise SchedulerViolation(
            f"{model}: only slot boundaries and crashes are legal, got {choice}; "
            "messages may not be carried across a boundary unresolved"
        )

    now = c.time + 1
    procs = c.procs
    emitted = []
    if isinstance(choice, Deliver):
        idx = next(
            (i for i, m in enumerate(c.in_flight) if m.dest == choice.dest and m.msg == choice.msg),
            None,
        )
        if idx is None:
            raise SchedulerViolation(f"{choice}: no such message in flight")
        if choice.dest in c.crashed:
            raise SchedulerViolation(f"{choice}: p{choice.dest} has crashed")
        rest = c.in_flight[:idx] + c.in_flight[idx + 1:]
        procs, out = _apply(protocol, procs, choice.dest, f"recv:{choice.msg}", c.crashed)
        if out:
            emitted.append(out)
    elif isinstance(choice, Delay):
        rest = c.in_flight
    elif isinstance(choice, Boundary):
        kind = "slot" if isinstance(model, Bisynchronous) else "recv"
        rest = tuple(m for m in c.in_flight if m.dest in c.crashed)
        for pid in range(len(procs)):
            if pid in c.crashed:
                continue
            inbox = [m for m in c.in_flight if m.dest == pid]
            if not inbox and isinstance(model, Bisynchronous):
                procs, out = _apply(protocol, procs, pid, "silence", c.crashed)
                if out:
                    emitted.append(out)
            for m in inbox:
                procs, out = _apply(protocol, procs, pid, f"{kind}:{m.msg}", c.crashed)
                if out:
                    emitted.append(out)
    else:
        raise SchedulerViolation(f"unknown step {choice!r}")

    flight = tuple(sorted(rest + tuple(InFlight(d, msg, now) for d, msg in emitted)))
    nxt = Configuration(procs, flight, c.crashed, now)
    _check_deadlines(model, nxt)
    return nxt


def legal_steps(
    protocol: ProtocolSpec, model: TimingModel, c: Configuration, crash_budget: int = 1
) -> list[Step]:
    """Legal choices in canonical order: deliveries by (dest, msg), then boundary, then crashes.

    Delay is omitted under the asynchronous model (it only stutters).
    """
    out: list[Step] = []
    if isinstance(model, Bisynchronous):
        out.append(Boundary())
    else:
        seen = set()
        for m in c.in_flight:
            if m.dest in c.crashed or (m.dest, m.msg) in seen:
                continue
            seen.add((m.dest, m.msg))
            out.append(Deliver(m.dest, m.msg))
        if isinstance(model, Synchronous):
            out.append(Delay())
            out.append(Boundary())
    if len(c.crashed) < crash_budget:
        out.extend(Crash(p) for p in range(len(c.procs)) if p not in c.crashed)
    legal = []
    for s in out:
        try:
            schedule_step(protocol, model, c, s, crash_budget)
        except SchedulerViolation:
            continue
        legal.append(s)
    return legal


def replay(
    protocol: ProtocolSpec,
    model: TimingModel,
    c: Configuration,
    steps: Iterable[Step],
    crash_budget: int = 1,
) -> list[Configuration]:
    out = [c]
    for s in steps:
        c = schedule_step(protocol, model, c, s, crash_budget)
        out.append(c)
    return out


def random_schedule(
    protocol: ProtocolSpec,
    model: TimingModel,
    c: Configuration,
    length: int,
    seed: int,
    crash_budget: int = 1,
) -> Schedule:
    """A seeded random legal schedule (used for replay and property checks)."""
    rng = random.Random(seed)
    steps, configs = [], [c]
    for _ in range(length):
        options = legal_steps(protocol, model, c, crash_budget)
        if not options:
            break
        s = rng.choice(options)
        c = schedule_step(protocol, model, c, s, crash_budget)
        steps.append(s)
        configs.append(c)
    return Schedule(tuple(steps), tuple(configs))


# -- valence -----------------------------------------------------------------------------

ZERO_VALENT = "0-valent"
ONE_VALENT = "1-valent"
BIVALENT = "bivalent"
UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class Valence:
    tag: str
    depth: int
    decisions: frozenset
    open_branches: bool

    def __str__(self):
        return f"{self.tag}@{self.depth}"


class ValenceOracle:
    """Exhaustive bounded-depth valence classifier with a shared memo.

    ``explore(c, d)`` returns the decision values seen within ``d`` steps and
    whether some branch is still undecided when the depth runs out.
    """

    def __init__(
        self,
        protocol: ProtocolSpec,
        model: TimingModel = Asynchronous(),
        crash_budget: int = 1,
        node_ceiling: int = DEFAULT_NODE_CEILING,
    ):
        self.protocol = protocol
        self.model = model
        self.crash_budget = crash_budget
        self.node_ceiling = node_ceiling
        self._memo: dict = {}

    @property
    def nodes(self) -> int:
        return len(self._memo)

    def explore(self, c: Configuration, depth: int) -> tuple[frozenset, bool]:
        key = (c.key(self.model), depth)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        if len(self._memo) >= self.node_ceiling:
            raise AnalysisError(
                f"valence search exceeded {self.node_ceiling} nodes",
                stats={"nodes": len(self._memo), "depth": depth},
            )
        values = set(c.decisions())
        undecided = not values
        if depth == 0:
            result = (frozenset(values), undecided)
        else:
            open_ = False
            for s in legal_steps(self.protocol, self.model, c, self.crash_budget):
                nxt = schedule_step(self.protocol, self.model, c, s, self.crash_budget)
                v, o = self.explore(nxt, depth - 1)
                values |= v
                open_ = open_ or (o and undecided)
            result = (frozenset(values), open_)
        self._memo[key] = result
        return result

    def classify(self, c: Configuration, depth: int = DEFAULT_DEPTH) -> Valence:
        values, open_ = self.explore(c, depth)
        if len(values) >= 2:
            tag = BIVALENT
        elif len(values) == 1 and not open_:
            tag = ZERO_VALENT if 0 in values else ONE_VALENT
        else:
            tag = UNDETERMINED
        return Valence(tag, depth, values, open_)


def classify_valence(
    protocol: ProtocolSpec,
    c: Configuration,
    depth: int = DEFAULT_DEPTH,
    model: TimingModel = Asynchronous(),
    crash_budget: int = 1,
    node_ceiling: int = DEFAULT_NODE_CEILING,
) -> Valence:
    return ValenceOracle(protocol, model, crash_budget, node_ceiling).classify(c, depth)


def find_bivalent_run(
    protocol: ProtocolSpec,
    model: TimingModel,
    steps: int,
    inputs: tuple[int, int] = (0, 1),
    depth: int = DEFAULT_DEPTH,
    crash_budget: int = 1,
    start: Optional[Configuration] = None,
    oracle: Optional[ValenceOracle] = None,
) -> Optional[Schedule]:
    """Greedy bivalence-preserving schedule of exactly ``steps`` steps, or None.

    At each step the lowest-indexed legal choice whose successor is still
    bivalent is taken.
    """
    oracle = oracle or ValenceOracle(protocol, model, crash_budget)
    c = start if start is not None else initial_configuration(protocol, inputs)
    if oracle.classify(c, depth).tag != BIVALENT:
        return None
    chosen, configs = [], [c]
    for _ in range(steps):
        for s in legal_steps(protocol, model, c, crash_budget):
            nxt = schedule_step(protocol, model, c, s, crash_budget)
            if oracle.classify(nxt, depth).tag == BIVALENT:
                chosen.append(s)
                configs.append(nxt)
                c = nxt
                break
        else:
            return None
    return Schedule(tuple(chosen), tuple(configs))


def max_delivery_delay(schedule: Schedule) -> int:
    """Largest number of steps any delivered message spent in flight."""
    worst = 0
    for before, step, after in zip(schedule.configurations, schedule.steps, schedule.configurations[1:]):
        if isinstance(step, Deliver):
            ages = [after.time - m.sent_at for m in before.in_flight
                    if m.dest == step.dest and m.msg == step.msg]
            worst = max(worst, max(ages))
        elif isinstance(step, Boundary):
            ages = [after.time - m.sent_at for m in before.in_flight if m.dest not in before.crashed]
            worst = max([worst] + ages)
    return worst


def max_legal_hold(
    protocol: ProtocolSpec, model: TimingModel, c: Configuration, limit: int
) -> int:
    """How many consecutive steps the scheduler may leave every message undelivered."""
    held = 0
    while held < limit:
        try:
            c = schedule_step(protocol, model, c, Delay())
        except SchedulerViolation:
            break
        held += 1
    return held
