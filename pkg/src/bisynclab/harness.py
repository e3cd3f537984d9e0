"""Deterministic experiment runner.

An experiment is described by a JSON config.  Every section is optional; a
missing section simply leaves the matching report rows unmeasured.  All
artifacts are line-delimited JSON with a fixed key order, so two runs of the
same config are byte-identical.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from . import knowledge as kn
from .baseline import ConventionalLink
from .consensus import (
    Primitive,
    consensus_number_demo,
    run_rw_consensus_under_adversary,
    run_swap_consensus_once,
)
from .link import FaultKind, FaultSpec, LinkEngine, LinkParams, Message, fault_sweep
from .mesh import (
    CLOS_DEFAULT_NS,
    build_mesh,
    cell_id,
    clos_baseline,
    count_spanning_trees,
    observer_visibility,
    parse_failure_script,
    simulate_failures,
)
from .petri import build_dual_diamond, load_net, reach_records, verify_net
from .timing import (
    Asynchronous,
    Bisynchronous,
    SchedulerViolation,
    check_requirement,
    Synchronous,
    find_bivalent_run,
    initial_configuration,
    load_protocol,
    max_legal_hold,
    max_delivery_delay,
    model_from_dict,
    shipped_protocol,
)

EXIT_OK, EXIT_VIOLATION, EXIT_ERROR = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


# -- clock and events -----------------------------------------------------------

class SimClock:
    def __init__(self, delta_ns: Optional[int] = None):
        self.now = 0
        self.delta_ns = delta_ns

    def advance(self, t: int) -> None:
        if t < self.now:
            raise RuntimeError(f"clock cannot go back from {self.now} to {t}")
        self.now = t

    @property
    def slot_index(self) -> Optional[int]:
        return None if not self.delta_ns else self.now // self.delta_ns


EVENT_KINDS = ("slot-start", "slot-boundary", "delivery", "fault", "poll")


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventLoop:
    """Events run in (time, insertion) order; handlers may only schedule forward."""

    def __init__(self, clock: SimClock):
        self.clock = clock
        self._heap: list = []
        self._seq = 0
        self.handlers: dict[str, Callable] = {}
        self.processed = 0

    def schedule(self, time: int, kind: str, payload: Any = None) -> None:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        if time < self.clock.now:
            raise RuntimeError(f"event {kind} at {time} is in the past (now {self.clock.now})")
        heapq.heappush(self._heap, Event(time, self._seq, kind, payload))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            ev = heapq.heappop(self._heap)
            self.clock.advance(ev.time)
            self.processed += 1
            handler = self.handlers.get(ev.kind)
            if handler is not None:
                handler(ev)


# -- config -----------------------------------------------------------------------------

DEFAULT_LINK_PARAMS = {
    "cable_length": 2,
    "propagation_velocity": 5,
    "frame_size": 512,
    "line_rate": 10_000_000_000,
}

SECTIONS = ("timing", "link", "petri", "adversary", "consensus", "knowledge", "mesh", "baseline")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    timing: dict = field(default_factory=lambda: {"kind": "bisynchronous"})
    link: Optional[dict] = None
    petri: Optional[dict] = None
    adversary: Optional[dict] = None
    consensus: Optional[dict] = None
    knowledge: Optional[dict] = None
    mesh: Optional[dict] = None
    baseline: Optional[dict] = None
    out: Optional[str] = None
    base_dir: Optional[str] = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[str] = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("$", "config must be a JSON object")
        known = {"name", "seed", "out", *SECTIONS}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown field")
        cfg = cls(base_dir=base_dir, **{k: v for k, v in d.items()})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        d = {"name": self.name, "seed": self.seed}
        for s in SECTIONS:
            if getattr(self, s) is not None:
                d[s] = getattr(self, s)
        if self.out is not None:
            d["out"] = self.out
        return d

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path

    def validate(self) -> None:
        if not isinstance(self.seed, int):
            raise ConfigError("seed", "must be an integer")
        try:
            model_from_dict(self.timing)
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError("timing", str(e)) from None
        for s in SECTIONS:
            v = getattr(self, s)
            if v is not None and not isinstance(v, dict):
                raise ConfigError(s, "must be an object")
        if self.link is not None:
            try:
                LinkParams.from_dict(self.link.get("params", DEFAULT_LINK_PARAMS))
            except (KeyError, ValueError, TypeError) as e:
                raise ConfigError("link.params", str(e)) from None
            faults = self.link.get("faults", "sweep")
            if faults != "sweep":
                if not isinstance(faults, list):
                    raise ConfigError("link.faults", "must be 'sweep' or a list of fault strings")
                for i, f in enumerate(faults):
                    try:
                        FaultSpec.parse(f)
                    except (ValueError, KeyError):
                        raise ConfigError(f"link.faults[{i}]", f"bad fault {f!r}") from None
        if self.mesh is not None:
            n = self.mesh.get("n")
            if not isinstance(n, int) or n < 2:
                raise ConfigError("mesh.n", "must be an integer >= 2")
            periods = self.mesh.get("poll_periods_ns", [])
            if not all(isinstance(p, int) and p > 0 for p in periods):
                raise ConfigError("mesh.poll_periods_ns", "must be positive integers")
        if self.adversary is not None:
            steps = self.adversary.get("steps", 1000)
            if not isinstance(steps, int) or steps < 0:
                raise ConfigError("adversary.steps", "must be a non-negative integer")


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}") from None
    return ExperimentConfig.from_dict(data, base_dir=str(path.parent))


# -- running ----------------------------------------------------------------------------

def _line(d: dict) -> str:
    return json.dumps(d, separators=(",", ":"))


@dataclass
class Tally:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool, n: int = 1) -> None:
        c = self.checks.setdefault(name, {"checked": 0, "violations": 0})
        c["checked"] += n
        if not ok:
            c["violations"] += 1

    @property
    def violations(self) -> int:
        return sum(c["violations"] for c in self.checks.values())


@dataclass
class Artifacts:
    files: dict  # file name -> text
    summary: dict
    measures: dict  # inputs for table1_report
    exit_code: int = EXIT_OK

    def write(self, out_dir: Union[str, Path]) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name in sorted(self.files):
            p = out / name
            p.write_text(self.files[name])
            written.append(p)
        return written


def _link_params(cfg: ExperimentConfig) -> LinkParams:
    return LinkParams.from_dict((cfg.link or {}).get("params", DEFAULT_LINK_PARAMS))


def _run_link(cfg, tally, files, measures):
    sec = cfg.link
    params = _link_params(cfg)
    engine = LinkEngine(params, buffer_capacity=sec.get("buffer_capacity", 4))
    clock = SimClock(engine.delta.nanoseconds)
    loop = EventLoop(clock)
    rng = random.Random(cfg.seed)
    faults = fault_sweep() if sec.get("faults", "sweep") == "sweep" else [
        FaultSpec.parse(f) for f in sec["faults"]
    ]
    random_slots = sec.get("random_slots", 0)
    plan = list(faults) + [None] * random_slots
    delta = engine.delta.nanoseconds

    def slot_start(ev):
        k = ev.payload
        fault = plan[k]
        if k >= len(faults):
            # sampled workload: random offers, occasional corruption, lazy receivers
            offers = (Message(rng.randrange(256)) if rng.random() < 0.8 else None,
                      Message(rng.randrange(256)) if rng.random() < 0.8 else None)
            if rng.random() < 0.1:
                fault = FaultSpec(FaultKind.CORRUPTION, rng.randrange(engine.ticks), rng.choice("ab"))
        else:
            offers = (Message(2 * k), Message(2 * k + 1))
        rec = engine.step(offers[0], offers[1], fault)
        # sweep crashes are per-slot probes: the endpoint restarts for the next slot
        engine.dead.clear()
        tally.add("link.boundary_dichotomy", rec.pair.pattern() in ("(M,M)", "(Empty,Empty)"))
        tally.add("link.endpoints_agree", rec.views[0].outcome is rec.views[1].outcome)
        loop.schedule(clock.now + delta, "slot-boundary", k)

    def slot_boundary(ev):
        k = ev.payload
        for ep in ("a", "b"):
            if k % 2 == 0 or k < len(faults):
                engine.drain(ep)
        if k + 1 < len(plan):
            loop.schedule(clock.now, "slot-start", k + 1)

    loop.handlers = {"slot-start": slot_start, "slot-boundary": slot_boundary}
    if plan:
        loop.schedule(0, "slot-start", 0)
    loop.run()
    acc = engine.accounting()
    tally.add("link.accounting", acc["unaccounted"] == 0)
    tally.add("link.no_silent_drops", acc["silent_drops"] == 0)
    files["link_trace.jsonl"] = "\n".join(engine.trace_lines()) + "\n"
    measures["link"] = {
        "delta_ns": delta,
        "max_resolution_ns": max(r.resolved_ns - r.start_ns for r in engine.records),
        "accounting": acc,
        "silence_verdicts": engine.counters["silence_verdicts"],
        "slots": len(engine.records),
    }
    return engine


def _run_petri(cfg, tally, files, measures):
    sec = cfg.petri
    net = load_net(cfg.resolve(sec["net"])) if sec.get("net") else build_dual_diamond()
    rep = verify_net(net)
    for name, ok, _ in rep.checks:
        tally.add(f"petri.{name}", ok)
    files["petri_reach.jsonl"] = "\n".join(reach_records(rep.graph)) + "\n"
    measures["petri"] = {"passed": rep.passed, "states": len(rep.graph.nodes)}


def _protocol(cfg, sec, key, default):
    p = sec.get(key)
    return load_protocol(cfg.resolve(p)) if p else shipped_protocol(default)


def _run_adversary(cfg, tally, files, measures):
    sec = cfg.adversary
    protocol = _protocol(cfg, sec, "protocol", "rw_toy")
    steps = sec.get("steps", 1000)
    depth = sec.get("depth", 8)
    inputs = tuple(sec.get("inputs", [0, 1]))
    rep = run_rw_consensus_under_adversary(inputs, steps, depth, protocol)
    tally.add("adversary.undecided", rep.certified() or rep.start_valence != "bivalent")
    bis = find_bivalent_run(protocol, Bisynchronous(), 1, inputs, depth)
    tally.add("adversary.bisync_none", bis is None)
    lines = []
    if rep.schedule is not None:
        for i, (step, c) in enumerate(zip(rep.schedule.steps, rep.schedule.configurations[1:])):
            lines.append(_line({"step": i, "choice": str(step), "time": c.time,
                                "states": [p.state for p in c.procs],
                                "in_flight": [f"{m.msg}->p{m.dest}" for m in c.in_flight]}))
    files["adversary.jsonl"] = "\n".join(lines) + ("\n" if lines else "")
    hold = sec.get("hold_steps", 100_000)
    c0 = initial_configuration(protocol, inputs)
    async_hold = max_legal_hold(protocol, Asynchronous(), c0, hold)
    tally.add("adversary.async_hold_legal", async_hold == hold)
    measures["adversary"] = {
        "steps": len(rep.schedule) if rep.schedule else 0,
        "undecided": rep.undecided,
        "start_valence": rep.start_valence,
        "max_delay_steps": max_delivery_delay(rep.schedule) if rep.schedule else 0,
        "bisync_run_exists": bis is not None,
        "async_hold_steps": async_hold,
        "sync_hold_steps": max_legal_hold(protocol, Synchronous(sec.get("sync_bound", 4)), c0, hold),
        "sync_bound": sec.get("sync_bound", 4),
    }


def _run_consensus(cfg, tally, files, measures):
    sec = cfg.consensus
    model = model_from_dict(cfg.timing)
    protocol = _protocol(cfg, sec, "protocol", "swap_consensus")
    check_requirement(protocol, model)
    params = _link_params(cfg)
    lines = []
    entries = 0
    for inputs in sec.get("inputs", [[0, 1], [1, 1]]):
        for f in fault_sweep():
            e, _ = run_swap_consensus_once(tuple(inputs), (f,), protocol, params)
            entries += 1
            tally.add("consensus.agreement", e.agreement)
            tally.add("consensus.validity", e.validity)
            tally.add("consensus.termination_bound", e.bound_met and e.survivors_decided)
            lines.append(_line({
                "inputs": list(inputs), "fault": str(f) if f else None,
                "decisions": [[d.pid, d.value, d.slot] for d in e.decisions],
                "slots": e.slots_used, "aborted": e.aborted_slots,
            }))
    files["consensus.jsonl"] = "\n".join(lines) + "\n"
    rw = consensus_number_demo(Primitive.RW_REGISTER, k=sec.get("rw_states", 2), toy_steps=0)
    sw = consensus_number_demo(Primitive.SWAP_REGISTER)
    tally.add("consensus.rw_witnesses", rw.ok)
    tally.add("consensus.swap_wait_free", sw.ok)
    measures["consensus"] = {
        "sweep_entries": entries,
        "rw_programs": rw.programs_checked,
        "rw_unbroken": len(rw.unbroken_programs),
        "rw_witness_kinds": dict(sorted(rw.witnesses.items())),
        "swap_runs": sw.runs_checked,
        "swap_violations": len(sw.violations),
    }


def _run_knowledge(cfg, tally, files, measures):
    sec = cfg.knowledge
    depth = sec.get("async_depth", 12)
    bis_traces = kn.bisync_traces()
    frame = kn.KripkeFrame(bis_traces, clocked=True)
    lines = []
    for t, tr in enumerate(bis_traces):
        s = frame.state_at(t, 1)
        tally.add("knowledge.chain", s.chain_holds())
        tally.add("knowledge.bisync_ck", s.common_knowledge)
        lines.append(_line({"trace": tr.label, "boundary": 1, **s.record()}))
    files["knowledge.jsonl"] = "\n".join(lines) + "\n"
    bis = kn.summarize(Bisynchronous(), bis_traces)
    asy = kn.summarize(Asynchronous(), kn.async_traces(depth), every_index=True)
    tally.add("knowledge.async_no_ck", asy.common_knowledge == 0)
    measures["knowledge"] = {
        "bisync_boundaries": bis.evaluated,
        "bisync_ck": bis.common_knowledge,
        "async_worlds": asy.evaluated,
        "async_ck": asy.common_knowledge,
        "async_asymmetric": asy.asymmetric,
    }


def _run_mesh(cfg, tally, files, measures):
    sec = cfg.mesh
    mesh = build_mesh(sec["n"])
    root = cell_id(mesh, str(sec.get("root", 0)))
    delta = sec.get("delta_ns") or LinkEngine(_link_params(cfg)).delta.nanoseconds
    if sec.get("failures"):
        script = parse_failure_script(cfg.resolve(sec["failures"]).read_text())
    else:
        script = parse_failure_script(sec.get("script", ""))
    run = simulate_failures(mesh, root, script, delta)
    tally.add("mesh.tree_valid", run.valid_after_every_heal)
    for hv in run.heals:
        if not hv.escalation:
            tally.add("mesh.heal_one_slot", hv.slots_to_heal == 1 and hv.info_scope.value == "LocalOnly")
    lines = run.trace_lines()
    vis = {}
    for period in sec.get("poll_periods_ns", [10 * delta]):
        rep = observer_visibility(run, period)
        for e in rep.entries:
            tally.add("mesh.sampling_matches", e.sampled_min == e.min_polls and
                      (e.sampled_max is None or e.sampled_max <= e.max_polls))
            if period > delta and e.down_ns is not None:
                tally.add("mesh.invisible_beyond_delta", not e.visible)
        vis[str(period)] = [e.visible for e in rep.entries]
        lines += [_line({"poll_period_ns": period, "edge": list(e.edge), "cell": e.cell,
                         "down_ns": e.down_ns, "visible": e.visible, "min_polls": e.min_polls})
                  for e in rep.entries]
    clos_delay = sec.get("clos_delay_ns", CLOS_DEFAULT_NS)
    clos_poll = sec.get("clos_poll_ns", 1_000_000)
    clos = clos_baseline(clos_delay, run, clos_poll)
    lines += [_line({"baseline": "clos", "poll_period_ns": clos_poll, "edge": list(e.edge),
                     "down_ns": e.down_ns, "visible": e.visible, "min_polls": e.min_polls})
              for e in clos.entries]
    files["mesh.jsonl"] = "\n".join(lines) + "\n"
    measures["mesh"] = {
        "spanning_trees": count_spanning_trees(mesh),
        "heals": len(run.heals),
        "escalations": sum(h.escalation for h in run.heals),
        "visible_any": {k: any(v) for k, v in vis.items()},
        "clos_visible": clos.any_visible,
    }


def _run_baseline(cfg, tally, files, measures):
    sec = cfg.baseline
    link = ConventionalLink(
        seed=cfg.seed,
        loss_rate=sec.get("loss_rate", 0.02),
        buffer_capacity=sec.get("buffer_capacity", 4),
        drain_per_slot=sec.get("drain_per_slot", 1),
        timeout_slots=sec.get("timeout_slots", 3),
        crash_at=sec.get("crash_at", {}),
    ).run(sec.get("slots", 500), sec.get("send_prob", 0.6))
    files["baseline.jsonl"] = "\n".join(link.trace_lines()) + "\n"
    measures["baseline"] = link.summary()


RUNNERS = {
    "petri": _run_petri,
    "link": _run_link,
    "adversary": _run_adversary,
    "consensus": _run_consensus,
    "knowledge": _run_knowledge,
    "mesh": _run_mesh,
    "baseline": _run_baseline,
}


def run_experiment(cfg: ExperimentConfig, only: Optional[list[str]] = None) -> Artifacts:
    cfg.validate()
    tally = Tally()
    files: dict = {}
    measures: dict = {}
    errors = []
    for name, runner in RUNNERS.items():
        if getattr(cfg, name) is None or (only and name not in only):
            continue
        try:
            runner(cfg, tally, files, measures)
        except SchedulerViolation as e:
            tally.add(f"{name}.model_guard", False)
            errors.append({"section": name, "kind": "scheduler-violation", "message": str(e)})
    code = EXIT_VIOLATION if tally.violations else EXIT_OK
    summary = {
        "name": cfg.name,
        "seed": cfg.seed,
        "checks": dict(sorted(tally.checks.items())),
        "violations": tally.violations,
        "errors": errors,
        "measures": measures,
    }
    art = Artifacts(files, summary, measures, code)
    art.files["summary.json"] = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if measures:
        art.files["table1.txt"] = format_table(table1_report(measures))
    return art


# -- comparison table -------------------------------------------------------------------------------

NOT_MEASURED = "not measured"


@dataclass(frozen=True)
class TableRow:
    assumption: str
    conventional: str
    oae: str


def table1_report(measures: dict) -> list[TableRow]:
    """One row per FLP assumption, each cell backed by a measured quantity."""
    adv, link, cons = measures.get("adversary"), measures.get("link"), measures.get("consensus")
    kno, base = measures.get("knowledge"), measures.get("baseline")
    rows = []

    conv = (f"{adv['steps']}-step undecided schedule; a message held {adv['async_hold_steps']} steps "
            f"(bound {adv['sync_bound']} allows {adv['sync_hold_steps']})" if adv else NOT_MEASURED)
    oae = NOT_MEASURED
    if link:
        oae = f"every slot resolved within {link['max_resolution_ns']} ns (delta {link['delta_ns']} ns)"
        if adv:
            oae += "; no bivalent run exists" if not adv["bisync_run_exists"] else "; BIVALENT RUN FOUND"
    rows.append(TableRow("Asynchrony", conv, oae))

    if cons:
        conv = (f"{cons['rw_programs'] - cons['rw_unbroken']}/{cons['rw_programs']} R/W programs "
                f"broken ({', '.join(f'{k} {v}' for k, v in cons['rw_witness_kinds'].items())})")
        oae = f"swap: {cons['swap_runs']} interleavings, {cons['swap_violations']} violations"
    else:
        conv = oae = NOT_MEASURED
    rows.append(TableRow("R/W vs swap", conv, oae))

    conv = (f"{base['timeout_guesses']} timeout guesses, {base['wrong_suspicions']} wrong"
            if base else NOT_MEASURED)
    oae = f"{link['silence_verdicts']} silence verdicts, 0 guesses" if link else NOT_MEASURED
    rows.append(TableRow("Crash ambiguity", conv, oae))

    conv = f"{base['silent_drops']} silent drops of {base['offered']} offered" if base else NOT_MEASURED
    if link:
        acc = link["accounting"]
        oae = (f"silent drops = {acc['silent_drops']}; offered {acc['offered']} = committed "
               f"{acc['committed']} + refused {acc['refused']} + aborted {acc['aborted_known']}")
    else:
        oae = NOT_MEASURED
    rows.append(TableRow("Message loss", conv, oae))

    if kno:
        conv = (f"common knowledge at {kno['async_ck']}/{kno['async_worlds']} async points, "
                f"{kno['async_asymmetric']} asymmetric")
        pct = 100 * kno["bisync_ck"] // kno["bisync_boundaries"] if kno["bisync_boundaries"] else 0
        oae = f"common knowledge at {kno['bisync_ck']}/{kno['bisync_boundaries']} boundaries ({pct}%)"
    else:
        conv = oae = NOT_MEASURED
    rows.append(TableRow("Knowledge", conv, oae))
    return rows


def format_table(rows: list[TableRow]) -> str:
    head = ("assumption", "conventional", "bisynchronous swap")
    cells = [head] + [(r.assumption, r.conventional, r.oae) for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(3)]
    out = []
    for i, c in enumerate(cells):
        out.append(" | ".join(x.ljust(w) for x, w in zip(c, widths)).rstrip())
        if i == 0:
            out.append("-+-".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def shipped_config(name: str) -> ExperimentConfig:
    from importlib import resources

    res = resources.files("bisynclab.data").joinpath("configs", f"{name}.json")
    return ExperimentConfig.from_dict(json.loads(res.read_text()))
