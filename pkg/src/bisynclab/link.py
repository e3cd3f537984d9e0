"""Slotted link engine.

Two endpoints, ``a`` and ``b``, share a point-to-point full-duplex link.  A
slot lasts one reconciliation interval Δ and is split into ``ticks`` sub-slot
ticks only so faults can strike mid-slot.  Each endpoint derives its slot
outcome from its *own* observation log; the two outcomes are compared, never
assumed equal.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Optional

DEFAULT_TICKS = 16
ENDPOINTS = ("a", "b")


class LinkError(Exception):
    pass


class LinkValidationError(LinkError, ValueError):
    pass


class ProtocolError(LinkError):
    """A simulation bug: a boundary invariant was violated."""


class CreditRefused(LinkError):
    """No credit in the requested direction; the frame stays with the sender."""


# -- timing ---------------------------------------------------------------

@dataclass(frozen=True)
class Delta:
    nanoseconds: int

    def __post_init__(self):
        if not isinstance(self.nanoseconds, int) or self.nanoseconds <= 0:
            raise LinkValidationError(f"Δ must be a positive integer of ns, got {self.nanoseconds!r}")


@dataclass(frozen=True)
class LinkParams:
    cable_length: float  # meters
    propagation_velocity: float  # ns per meter
    frame_size: int  # bits
    line_rate: float  # bits per second
    processing_allowance: float = 0  # ns, added once per endpoint pair

    def __post_init__(self):
        for name in ("cable_length", "propagation_velocity", "line_rate"):
            if not getattr(self, name) > 0:
                raise LinkValidationError(f"{name} must be strictly positive")
        if self.frame_size < 0 or self.processing_allowance < 0:
            raise LinkValidationError("frame_size and processing_allowance must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "LinkParams":
        return cls(**d)


def compute_delta(p: LinkParams) -> Delta:
    """Round-trip propagation + serialization on both legs + processing allowance.

    Computed exactly and rounded up to whole nanoseconds so Δ is a bound.
    """
    prop = 2 * Fraction(p.cable_length) * Fraction(p.propagation_velocity)
    ser = 2 * Fraction(p.frame_size) * 10**9 / Fraction(p.line_rate)
    total = prop + ser + Fraction(p.processing_allowance)
    return Delta(max(1, math.ceil(total)))


class SilenceVerdict(enum.Enum):
    PENDING = "pending"
    NEGATIVE_DEFINITIVE = "negative-definitive"
    RECEIVED = "received"


def resolve_silence(
    slot_index: int, elapsed: int, delta: Delta, update_arrived: bool = False
) -> SilenceVerdict:
    """Verdict on a slot at ``elapsed`` ns after its start.

    There is no 'maybe': before Δ the slot is pending, at or after Δ silence
    means the peer sent nothing.
    """
    if slot_index < 0 or elapsed < 0:
        raise LinkValidationError("slot_index and elapsed must be non-negative")
    if update_arrived:
        return SilenceVerdict.RECEIVED
    if elapsed >= delta.nanoseconds:
        return SilenceVerdict.NEGATIVE_DEFINITIVE
    return SilenceVerdict.PENDING


# -- registers and outcomes ----------------------------------------------

@dataclass(frozen=True)
class Message:
    """Opaque payload with an integer tag; the link never inspects it."""

    tag: int
    payload: bytes = b""

    def __str__(self):
        return f"M{self.tag}"


@dataclass(frozen=True)
class Reconciled:
    """Content of both registers after a committed slot: what each side offered."""

    from_a: Optional[Message]
    from_b: Optional[Message]

    def __str__(self):
        return f"({self.from_a or '-'}|{self.from_b or '-'})"


EMPTY = None


@dataclass(frozen=True)
class RegisterPair:
    a: Optional[Reconciled] = EMPTY
    b: Optional[Reconciled] = EMPTY

    def at_boundary(self) -> bool:
        return self.a == self.b

    def pattern(self) -> str:
        if self.a is None and self.b is None:
            return "(Empty,Empty)"
        if self.a == self.b:
            return "(M,M)"
        return "mixed"


class Outcome(enum.Enum):
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(frozen=True)
class SlotOutcome:
    tag: Outcome
    slot_index: int
    idle: bool = False

    def label(self) -> str:
        return "idle" if self.idle else self.tag.value


# -- faults ----------------------------------------------------------------

class FaultKind(enum.Enum):
    LINK_CUT = "link-cut"
    CRASH = "crash"
    CORRUPTION = "corruption"


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    tick: int
    endpoint: str  # crash: who dies; corruption: whose outgoing frame; cut: nearer end

    def __post_init__(self):
        if self.endpoint not in ENDPOINTS:
            raise LinkValidationError(f"endpoint must be 'a' or 'b', not {self.endpoint!r}")
        if self.tick < 0:
            raise LinkValidationError("fault tick must be >= 0")

    def __str__(self):
        return f"{self.kind.value}@{self.tick}:{self.endpoint}"

    @classmethod
    def parse(cls, text: str) -> "FaultSpec":
        kind, _, rest = text.partition("@")
        tick, _, ep = rest.partition(":")
        return cls(FaultKind(kind), int(tick), ep)


def fault_sweep(ticks: int = DEFAULT_TICKS) -> list[Optional[FaultSpec]]:
    """``None`` plus every fault kind at every tick, at either endpoint."""
    out: list[Optional[FaultSpec]] = [None]
    for kind in FaultKind:
        for t in range(ticks):
            for ep in ENDPOINTS:
                out.append(FaultSpec(kind, t, ep))
    return out


# -- sub-slot simulation -----------------------------------------------------

class Obs(enum.Enum):
    OK = "ok"
    CORRUPT = "corrupt"
    SILENT = "silent"  # carrier present, peer emitted nothing
    NO_CARRIER = "no-carrier"


@dataclass(frozen=True)
class EndpointView:
    """Everything one endpoint can see about a slot, and what it concluded."""

    endpoint: str
    alive: bool
    offered: Optional[Message]
    observations: tuple[Obs, ...]
    received: Optional[Message]
    echo: Optional[bool]  # peer's end-of-slot "all clean" echo; None if it never arrived
    outcome: Outcome
    register: Optional[Reconciled]

    @property
    def peer_silent(self) -> bool:
        return self.alive and all(o is Obs.SILENT for o in self.observations)


@dataclass(frozen=True)
class SlotRecord:
    slot_index: int
    offers: tuple[Optional[Message], Optional[Message]]
    fault: Optional[FaultSpec]
    pair: RegisterPair
    outcome: SlotOutcome
    views: tuple[EndpointView, EndpointView]
    start_ns: int = 0
    resolved_ns: int = 0


def _peer(ep: str) -> str:
    return "b" if ep == "a" else "a"


def simulate_slot(
    pair: RegisterPair,
    offer_a: Optional[Message],
    offer_b: Optional[Message],
    fault: Optional[FaultSpec] = None,
    *,
    slot_index: int = 0,
    ticks: int = DEFAULT_TICKS,
    dead: Iterable[str] = (),
) -> SlotRecord:
    """Tick-level run of one reconciliation.

    Each tick both live endpoints emit a frame carrying their offer.  After the
    last tick each live endpoint echoes whether it saw every frame intact; the
    echo rides the boundary leg that Δ budgets for.  An endpoint commits iff
    its own log is clean and the peer's echo arrived reporting clean.
    """
    if not pair.at_boundary():
        raise ProtocolError(f"slot {slot_index} entered with mixed register pair {pair}")
    if fault is not None and fault.tick >= ticks:
        raise LinkValidationError(f"fault tick {fault.tick} outside 0..{ticks - 1}")
    offers = {"a": offer_a, "b": offer_b}
    dead = set(dead)
    crash_at = {ep: (0 if ep in dead else None) for ep in ENDPOINTS}
    if fault is not None and fault.kind is FaultKind.CRASH and fault.endpoint not in dead:
        crash_at[fault.endpoint] = fault.tick
    cut_at = fault.tick if fault is not None and fault.kind is FaultKind.LINK_CUT else None

    def alive(ep, t):
        return crash_at[ep] is None or t < crash_at[ep]

    logs = {ep: [] for ep in ENDPOINTS}
    for t in range(ticks):
        for rx in ENDPOINTS:
            if not alive(rx, t):
                continue
            tx = _peer(rx)
            if cut_at is not None and t >= cut_at:
                obs = Obs.NO_CARRIER
            elif not alive(tx, t):
                obs = Obs.SILENT
            elif (
                fault is not None
                and fault.kind is FaultKind.CORRUPTION
                and fault.tick == t
                and fault.endpoint == tx
            ):
                obs = Obs.CORRUPT
            else:
                obs = Obs.OK
            logs[rx].append(obs)

    survived = {ep: alive(ep, ticks) for ep in ENDPOINTS}
    clean = {ep: survived[ep] and all(o is Obs.OK for o in logs[ep]) for ep in ENDPOINTS}
    link_up_at_boundary = cut_at is None
    nothing_offered = offer_a is None and offer_b is None
    content = None if nothing_offered else Reconciled(offer_a, offer_b)

    views = []
    for ep in ENDPOINTS:
        peer = _peer(ep)
        echo = clean[peer] if (survived[ep] and survived[peer] and link_up_at_boundary) else None
        commit = clean[ep] and echo is True and not nothing_offered
        views.append(
            EndpointView(
                endpoint=ep,
                alive=survived[ep],
                offered=offers[ep],
                observations=tuple(logs[ep]),
                received=offers[peer] if clean[ep] else None,
                echo=echo,
                outcome=Outcome.COMMITTED if commit else Outcome.ABORTED,
                register=content if commit else EMPTY,
            )
        )
    va, vb = views
    if va.outcome is not vb.outcome:
        raise ProtocolError(f"slot {slot_index}: endpoints disagree ({va.outcome}, {vb.outcome})")
    new_pair = RegisterPair(va.register, vb.register)
    if new_pair.pattern() == "mixed":
        raise ProtocolError(f"slot {slot_index}: mixed register pair {new_pair}")
    outcome = SlotOutcome(va.outcome, slot_index, idle=nothing_offered)
    return SlotRecord(slot_index, (offer_a, offer_b), fault, new_pair, outcome, (va, vb))


def run_slot(
    pair: RegisterPair,
    offer_a: Optional[Message],
    offer_b: Optional[Message],
    fault: Optional[FaultSpec] = None,
    *,
    slot_index: int = 0,
    ticks: int = DEFAULT_TICKS,
) -> tuple[RegisterPair, SlotOutcome]:
    rec = simulate_slot(pair, offer_a, offer_b, fault, slot_index=slot_index, ticks=ticks)
    return rec.pair, rec.outcome


# -- credits -----------------------------------------------------------------

class Direction(enum.Enum):
    A_TO_B = "a->b"
    B_TO_A = "b->a"

    @classmethod
    def sending(cls, ep: str) -> "Direction":
        return cls.A_TO_B if ep == "a" else cls.B_TO_A


@dataclass(frozen=True)
class CreditState:
    credits_a_to_b: int
    credits_b_to_a: int
    capacity: int

    def __post_init__(self):
        if self.capacity <= 0:
            raise LinkValidationError("credit capacity must be positive")
        for c in (self.credits_a_to_b, self.credits_b_to_a):
            if not 0 <= c <= self.capacity:
                raise LinkValidationError(f"credit count {c} outside 0..{self.capacity}")

    @classmethod
    def full(cls, capacity: int) -> "CreditState":
        return cls(capacity, capacity, capacity)

    def get(self, d: Direction) -> int:
        return self.credits_a_to_b if d is Direction.A_TO_B else self.credits_b_to_a

    def _with(self, d: Direction, n: int) -> "CreditState":
        if d is Direction.A_TO_B:
            return replace(self, credits_a_to_b=n)
        return replace(self, credits_b_to_a=n)


def credit_consume(c: CreditState, direction: Direction) -> CreditState:
    if c.get(direction) < 1:
        raise CreditRefused(f"no credit for {direction.value}")
    return c._with(direction, c.get(direction) - 1)


def credit_grant(c: CreditState, direction: Direction, n: int = 1) -> CreditState:
    if n < 1:
        raise LinkValidationError("grant must be a positive number of credits")
    if c.get(direction) + n > c.capacity:
        raise LinkValidationError(
            f"granting {n} on {direction.value} exceeds capacity {c.capacity}"
        )
    return c._with(direction, c.get(direction) + n)


# -- the engine ----------------------------------------------------------------

@dataclass
class LinkEngine:
    """Stateful link: slots, credits, receive buffers, accounting and trace."""

    params: LinkParams
    ticks: int = DEFAULT_TICKS
    buffer_capacity: int = 4
    delta: Delta = field(init=False)
    slot_index: int = field(default=0, init=False)
    pair: RegisterPair = field(default_factory=RegisterPair, init=False)
    credits: CreditState = field(init=False)
    dead: set = field(default_factory=set, init=False)
    buffers: dict = field(init=False)
    counters: Counter = field(default_factory=Counter, init=False)
    records: list = field(default_factory=list, init=False)
    _trace: list = field(default_factory=list, init=False)

    def __post_init__(self):
        if self.ticks < 1:
            raise LinkValidationError("ticks must be >= 1")
        self.delta = compute_delta(self.params)
        self.credits = CreditState.full(self.buffer_capacity)
        self.buffers = {ep: deque() for ep in ENDPOINTS}

    @property
    def now(self) -> int:
        return self.slot_index * self.delta.nanoseconds

    def step(
        self,
        offer_a: Optional[Message] = None,
        offer_b: Optional[Message] = None,
        fault: Optional[FaultSpec] = None,
    ) -> SlotRecord:
        offers = {"a": offer_a, "b": offer_b}
        admitted = {}
        refused = []
        for ep in ENDPOINTS:
            msg = offers[ep]
            if msg is None or ep in self.dead:
                admitted[ep] = None
                continue
            self.counters["offered"] += 1
            try:
                self.credits = credit_consume(self.credits, Direction.sending(ep))
            except CreditRefused:
                self.counters["refused"] += 1
                refused.append(ep)
                admitted[ep] = None
                continue
            admitted[ep] = msg

        start = self.now
        rec = simulate_slot(
            self.pair,
            admitted["a"],
            admitted["b"],
            fault,
            slot_index=self.slot_index,
            ticks=self.ticks,
            dead=self.dead,
        )
        rec = replace(rec, start_ns=start, resolved_ns=start + self.delta.nanoseconds)
        views = {v.endpoint: v for v in rec.views}
        for ep in ENDPOINTS:
            if not views[ep].alive:
                self.dead.add(ep)

        for ep in ENDPOINTS:
            msg = admitted[ep]
            if msg is None:
                continue
            rx = _peer(ep)
            sender_says = views[ep].outcome
            if rec.outcome.tag is Outcome.COMMITTED:
                self.buffers[rx].append(msg)
                if len(self.buffers[rx]) > self.buffer_capacity:
                    self.counters["overflow"] += 1
                self.counters["committed"] += 1
            else:
                self.credits = credit_grant(self.credits, Direction.sending(ep))
                self.counters["aborted_known"] += 1
            delivered = rec.outcome.tag is Outcome.COMMITTED
            if (sender_says is Outcome.COMMITTED) != delivered:
                self.counters["silent_drops"] += 1
        if rec.outcome.tag is Outcome.ABORTED and rec.outcome.idle:
            self.counters["idle_slots"] += 1
        self.counters["silence_verdicts"] += sum(views[ep].peer_silent for ep in ENDPOINTS)

        self.pair = rec.pair
        self.records.append(rec)
        self._trace.append(self._trace_line(rec, refused))
        self.slot_index += 1
        return rec

    def drain(self, ep: str, n: Optional[int] = None) -> list[Message]:
        """Receiver consumes buffered messages and returns the credits to the sender."""
        buf = self.buffers[ep]
        k = len(buf) if n is None else min(n, len(buf))
        out = [buf.popleft() for _ in range(k)]
        if k:
            self.credits = credit_grant(self.credits, Direction.sending(_peer(ep)), k)
        return out

    def accounting(self) -> dict:
        c = self.counters
        lost = c["offered"] - (c["committed"] + c["refused"] + c["aborted_known"])
        return {
            "offered": c["offered"],
            "committed": c["committed"],
            "refused": c["refused"],
            "aborted_known": c["aborted_known"],
            "unaccounted": lost,
            "silent_drops": c["silent_drops"],
            "overflow": c["overflow"],
        }

    def _trace_line(self, rec: SlotRecord, refused: list) -> str:
        fields = {
            "slot_index": rec.slot_index,
            "offers": [str(m) if m else None for m in rec.offers],
            "refused": refused,
            "fault": str(rec.fault) if rec.fault else None,
            "outcome": rec.outcome.label(),
            "registers": [str(rec.pair.a) if rec.pair.a else None, str(rec.pair.b) if rec.pair.b else None],
            "credits": [self.credits.credits_a_to_b, self.credits.credits_b_to_a],
            "start_ns": rec.start_ns,
            "resolved_ns": rec.resolved_ns,
        }
        return json.dumps(fields, separators=(",", ":"))

    def trace_lines(self) -> list[str]:
        return list(self._trace)
