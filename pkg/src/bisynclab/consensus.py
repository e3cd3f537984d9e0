"""Two-process consensus over the swap link and over read/write registers."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Optional, Sequence

from .link import (
    FaultKind,
    FaultSpec,
    LinkEngine,
    LinkParams,
    Message,
    Outcome,
    SilenceVerdict,
    fault_sweep,
    resolve_silence,
)
from .timing import (
    Asynchronous,
    BIVALENT,
    ProtocolSpec,
    Schedule,
    ValenceOracle,
    find_bivalent_run,
    initial_configuration,
    shipped_protocol,
)

DEFAULT_LINK = LinkParams(cable_length=2, propagation_velocity=5, frame_size=512, line_rate=10**10)


class ConsensusError(Exception):
    pass


class Primitive(enum.Enum):
    RW_REGISTER = "rw-register"
    SWAP_REGISTER = "swap-register"


@dataclass(frozen=True)
class Decision:
    pid: int
    value: int
    slot: int


@dataclass(frozen=True)
class SweepEntry:
    inputs: tuple[int, int]
    fault: Optional[FaultSpec]
    decisions: tuple[Decision, ...]
    slots_used: int
    aborted_slots: int
    faulted_slots: int
    crashed: tuple[str, ...]

    @property
    def decided_values(self) -> set:
        return {d.value for d in self.decisions}

    @property
    def agreement(self) -> bool:
        return len(self.decided_values) <= 1

    @property
    def validity(self) -> bool:
        return self.decided_values <= set(self.inputs)

    @property
    def survivors_decided(self) -> bool:
        alive = {0, 1} - {"ab".index(e) for e in self.crashed}
        return alive <= {d.pid for d in self.decisions}

    @property
    def bound_met(self) -> bool:
        last = max((d.slot for d in self.decisions), default=0)
        return last <= 1 + self.faulted_slots

    @property
    def ok(self) -> bool:
        return self.agreement and self.validity and self.survivors_decided and self.bound_met


def _msg_value(tag: str) -> int:
    return int(tag.lstrip("D"))


def run_swap_consensus_once(
    inputs: tuple[int, int],
    faults: Sequence[Optional[FaultSpec]] = (None,),
    protocol: Optional[ProtocolSpec] = None,
    params: LinkParams = DEFAULT_LINK,
    max_slots: int = 64,
) -> tuple[SweepEntry, LinkEngine]:
    """Drive the swap-consensus automaton over a link; ``faults[k]`` strikes slot k+1."""
    protocol = protocol or shipped_protocol("swap_consensus")
    engine = LinkEngine(params)
    states, offers = [], []
    for pid, v in enumerate(inputs):
        r = protocol.start(pid, v)
        states.append(r)
        offers.append(r.emit)
    decided: dict[int, Decision] = {}
    aborted = 0
    slot = 0
    while slot < max_slots:
        live = [p for p in (0, 1) if "ab"[p] not in engine.dead]
        if all(p in decided for p in live):
            break
        slot += 1
        fault = faults[slot - 1] if slot - 1 < len(faults) else None
        msgs = [
            Message(_msg_value(offers[p])) if p not in decided and offers[p] is not None else None
            for p in (0, 1)
        ]
        rec = engine.step(msgs[0], msgs[1], fault)
        if rec.outcome.tag is Outcome.ABORTED:
            aborted += 1
        for p, view in enumerate(rec.views):
            if not view.alive or p in decided:
                continue
            event = None
            if rec.outcome.tag is Outcome.COMMITTED:
                peer = rec.pair.a.from_b if p == 0 else rec.pair.a.from_a
                if peer is not None:
                    event = f"slot:{peer.tag}"
            elif view.peer_silent:
                verdict = resolve_silence(rec.slot_index, engine.delta.nanoseconds, engine.delta)
                if verdict is SilenceVerdict.NEGATIVE_DEFINITIVE:
                    event = "silence"
            if event is None:
                continue
            r = protocol.react(p, states[p].state, event)
            if r is None:
                continue
            states[p] = r
            if r.emit is not None:
                offers[p] = r.emit
            if r.decide is not None:
                prev = decided.get(p)
                if prev is not None and prev.value != r.decide:
                    raise ConsensusError(f"p{p} changed its decision")
                decided.setdefault(p, Decision(p, r.decide, slot))
    faulted = sum(1 for f in faults[:slot] if f is not None)
    entry = SweepEntry(
        tuple(inputs),
        faults[0] if len(faults) == 1 else None,
        tuple(decided[p] for p in sorted(decided)),
        slot,
        aborted,
        faulted,
        tuple(sorted(engine.dead)),
    )
    return entry, engine


def run_swap_consensus(
    inputs: tuple[int, int],
    sweep: Optional[Iterable[Optional[FaultSpec]]] = None,
    params: LinkParams = DEFAULT_LINK,
) -> list[SweepEntry]:
    """One run per sweep entry; the fault strikes slot 1 and later slots are clean."""
    sweep = fault_sweep() if sweep is None else list(sweep)
    protocol = shipped_protocol("swap_consensus")
    return [run_swap_consensus_once(inputs, (f,), protocol, params)[0] for f in sweep]


# -- FLP attack ---------------------------------------------------------------------

@dataclass(frozen=True)
class AttackReport:
    inputs: tuple[int, int]
    steps: int
    start_valence: str
    schedule: Optional[Schedule]
    undecided: bool
    anomaly: bool
    note: str
    oracle_nodes: int = 0

    def certified(self) -> bool:
        return self.undecided and not self.anomaly


def run_rw_consensus_under_adversary(
    inputs: tuple[int, int], steps: int, depth: int = 8, protocol: Optional[ProtocolSpec] = None
) -> AttackReport:
    protocol = protocol or shipped_protocol("rw_toy")
    model = Asynchronous()
    oracle = ValenceOracle(protocol, model)
    c0 = initial_configuration(protocol, inputs)
    start = oracle.classify(c0, depth)
    if steps == 0:
        undecided = not c0.decisions()
        return AttackReport(tuple(inputs), 0, start.tag, Schedule((), (c0,)), undecided, False,
                            "no steps requested", oracle.nodes)
    if start.tag != BIVALENT:
        return AttackReport(tuple(inputs), steps, start.tag, None, False, False,
                            f"start is {start.tag}; attack inapplicable", oracle.nodes)
    run = find_bivalent_run(protocol, model, steps, inputs, depth, start=c0, oracle=oracle)
    if run is None:
        return AttackReport(tuple(inputs), steps, start.tag, None, False, True,
                            "adversary lost bivalence: protocol decided", oracle.nodes)
    undecided = all(not c.decisions() for c in run.configurations)
    note = f"{len(run)} steps, every prefix bivalent at depth {depth}"
    return AttackReport(tuple(inputs), steps, start.tag, run, undecided, not undecided, note, oracle.nodes)


# -- consensus-number demos ------------------------------------------------------------

BOTTOM = None


@dataclass(frozen=True)
class RWProgram:
    """Same program for both processes; process i writes R[i] and reads R[1-i].

    ``ops[s]`` is one of ("write", v, next), ("read", next_bottom, next_0, next_1)
    or ("decide", v).  A process with input v starts in state v mod k.
    """

    ops: tuple

    @property
    def k(self) -> int:
        return len(self.ops)


def rw_program_space(k: int = 2) -> list[RWProgram]:
    states = range(k)
    choices = []
    for v in (0, 1):
        for nxt in states:
            choices.append(("write", v, nxt))
    for nb, n0, n1 in product(states, repeat=3):
        choices.append(("read", nb, n0, n1))
    choices.extend((("decide", 0), ("decide", 1)))
    return [RWProgram(ops) for ops in product(choices, repeat=k)]


@dataclass(frozen=True)
class Witness:
    kind: str  # validity | agreement | wait-freedom
    inputs: tuple[int, int]
    schedule: tuple  # sequence of pids (the interleaving)


def _rw_successor(prog: RWProgram, conf, p):
    states, decided, regs = conf
    if decided[p] is not None:
        return None
    op = prog.ops[states[p]]
    states, decided, regs = list(states), list(decided), list(regs)
    if op[0] == "write":
        regs[p] = op[1]
        states[p] = op[2]
    elif op[0] == "read":
        val = regs[1 - p]
        states[p] = op[1] if val is BOTTOM else op[2 + val]
    else:
        decided[p] = op[1]
    return (tuple(states), tuple(decided), tuple(regs))


def rw_witness(prog: RWProgram) -> Optional[Witness]:
    """First violation of validity, agreement or wait-freedom over all interleavings."""
    for inputs in product((0, 1), repeat=2):
        start = (tuple(v % prog.k for v in inputs), (None, None), (BOTTOM, BOTTOM))
        parent = {start: None}
        order = deque([start])
        while order:
            c = order.popleft()
            for p in (0, 1):
                n = _rw_successor(prog, c, p)
                if n is not None and n not in parent:
                    parent[n] = (c, p)
                    order.append(n)

        def path(c):
            out = []
            while parent[c] is not None:
                c, p = parent[c]
                out.append(p)
            return tuple(reversed(out))

        for c in parent:
            vals = {d for d in c[1] if d is not None}
            if not vals <= set(inputs):
                return Witness("validity", inputs, path(c))
            if len(vals) > 1:
                return Witness("agreement", inputs, path(c))
        # wait-freedom: the peer halts (crash) and the solo run never decides
        for c in parent:
            for p in (0, 1):
                seen, cur, trail = set(), c, []
                while cur[1][p] is None and cur not in seen:
                    seen.add(cur)
                    cur = _rw_successor(prog, cur, p)
                    trail.append(p)
                if cur[1][p] is None:
                    return Witness("wait-freedom", inputs, path(c) + tuple(trail))
    return None


@dataclass(frozen=True)
class SwapRun:
    inputs: tuple[int, int]
    schedule: tuple
    crashed: Optional[int]
    decisions: tuple  # per pid value or None
    own_steps: tuple[int, int]


SWAP_PROGRAM = ("announce", "swap", "read", "decide")


def _swap_runs(inputs):
    """Every interleaving of the announce/swap protocol, with every crash point."""
    runs = []

    def explore(pc, ann, swap_reg, got, decisions, sched, crashed, steps):
        live = [p for p in (0, 1) if p != crashed and decisions[p] is None]
        if not live:
            runs.append(SwapRun(inputs, tuple(sched), crashed, tuple(decisions), tuple(steps)))
            return
        for p in live:
            npc, nann, nsw, ngot, nd, nst = list(pc), list(ann), swap_reg, list(got), list(decisions), list(steps)
            op = SWAP_PROGRAM[pc[p]]
            if op == "announce":
                nann[p] = inputs[p]
            elif op == "swap":
                ngot[p], nsw = nsw, p
            elif op == "read":
                # first to swap wins; the loser adopts the winner's announcement
                ngot[p] = inputs[p] if ngot[p] is None else nann[ngot[p]]
            else:
                nd[p] = ngot[p]
            npc[p] += 1
            nst[p] += 1
            explore(tuple(npc), tuple(nann), nsw, tuple(ngot), nd, sched + [p], crashed, nst)
        if crashed is None:
            for p in live:
                explore(pc, ann, swap_reg, got, list(decisions), sched + [f"crash{p}"], p, list(steps))

    explore((0, 0), (None, None), None, (None, None), [None, None], [], None, [0, 0])
    return runs


@dataclass
class DemoReport:
    primitive: Primitive
    runs_checked: int = 0
    programs_checked: int = 0
    violations: list = field(default_factory=list)
    witnesses: dict = field(default_factory=dict)
    unbroken_programs: list = field(default_factory=list)
    toy_witness: Optional[AttackReport] = None
    note: str = ""

    @property
    def ok(self) -> bool:
        if self.primitive is Primitive.SWAP_REGISTER:
            return self.runs_checked > 0 and not self.violations
        toy_ok = self.toy_witness is None or self.toy_witness.certified()
        return self.programs_checked > 0 and not self.unbroken_programs and toy_ok


def consensus_number_demo(primitive: Primitive, k: int = 2, toy_steps: int = 1000) -> DemoReport:
    report = DemoReport(primitive)
    if primitive is Primitive.SWAP_REGISTER:
        bound = len(SWAP_PROGRAM)
        for inputs in product((0, 1), repeat=2):
            for run in _swap_runs(inputs):
                report.runs_checked += 1
                vals = {d for d in run.decisions if d is not None}
                live = [p for p in (0, 1) if p != run.crashed]
                problems = []
                if len(vals) > 1:
                    problems.append("agreement")
                if not vals <= set(inputs):
                    problems.append("validity")
                if any(run.decisions[p] is None or run.own_steps[p] > bound for p in live):
                    problems.append("wait-freedom")
                if problems:
                    report.violations.append((run, problems))
        report.note = f"{report.runs_checked} interleavings with crash points, wait-free in {bound} own steps"
        return report
    programs = rw_program_space(k)
    for prog in programs:
        report.programs_checked += 1
        w = rw_witness(prog)
        if w is None:
            report.unbroken_programs.append(prog)
        else:
            report.witnesses[w.kind] = report.witnesses.get(w.kind, 0) + 1
    if toy_steps:
        report.toy_witness = run_rw_consensus_under_adversary((0, 1), toy_steps)
    report.note = f"{report.programs_checked} symmetric {k}-state programs, each with a checked witness"
    return report


def solo_swap_decision(inputs: tuple[int, int], survivor: int) -> Optional[int]:
    """Decision of ``survivor`` when the peer crashes before taking any step."""
    for run in _swap_runs(inputs):
        if run.crashed == 1 - survivor and run.schedule and run.schedule[0] == f"crash{1 - survivor}":
            return run.decisions[survivor]
    return None
