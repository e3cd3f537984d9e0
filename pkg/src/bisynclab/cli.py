"""Command line entry point: ``bisynclab <command> ...``."""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import harness
from .consensus import (
    Primitive,
    consensus_number_demo,
    run_rw_consensus_under_adversary,
    run_swap_consensus,
)
from .link import FaultSpec, LinkEngine, LinkParams, Message, fault_sweep
from .mesh import (
    build_mesh,
    cell_id,
    count_spanning_trees,
    load_failure_script,
    observer_visibility,
    simulate_failures,
)
from .petri import build_dual_diamond, load_net, reach_records, verify_net
from .timing import Asynchronous, find_bivalent_run, load_protocol, model_from_dict, shipped_protocol

EXIT_OK, EXIT_VIOLATION, EXIT_ERROR = harness.EXIT_OK, harness.EXIT_VIOLATION, harness.EXIT_ERROR


def _emit(lines, out, name):
    text = "\n".join(lines) + ("\n" if lines else "")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / name).write_text(text)
    else:
        sys.stdout.write(text)


def _from_config(args, section):
    cfg = harness.load_config(args.config)
    art = harness.run_experiment(cfg, only=None if section is None else [section])
    out = args.out or cfg.out
    if out:
        art.write(out)
    else:
        sys.stdout.write(art.files.get("table1.txt", ""))
    print(f"violations: {art.summary['violations']}", file=sys.stderr)
    for e in art.summary["errors"]:
        print(f"{e['section']}: {e['kind']}: {e['message']}", file=sys.stderr)
    return art.exit_code


def cmd_petri(args):
    if args.config:
        return _from_config(args, "petri")
    net = load_net(args.netfile) if args.netfile else build_dual_diamond()
    rep = verify_net(net)
    if args.action == "reach":
        if rep.graph is None:
            print("reachability failed", file=sys.stderr)
            return EXIT_VIOLATION
        _emit(reach_records(rep.graph), args.out, "petri_reach.txt")
        return EXIT_OK
    for name, ok, detail in rep.checks:
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if rep.passed else EXIT_VIOLATION


def cmd_link(args):
    if args.config:
        return _from_config(args, "link")
    params = harness.DEFAULT_LINK_PARAMS
    if args.params:
        params = json.loads(Path(args.params).read_text())
    engine = LinkEngine(LinkParams.from_dict(params))
    if args.faults == "sweep":
        faults = fault_sweep()
    else:
        faults = [None if f == "none" else FaultSpec.parse(f) for f in args.faults.split(",") if f]
    rng = random.Random(args.seed)
    offers = [(Message(2 * k), Message(2 * k + 1)) for k in range(len(faults))]
    for _ in range(args.random_slots):
        faults.append(None)
        offers.append(tuple(Message(rng.randrange(256)) if rng.random() < 0.8 else None for _ in "ab"))
    for (oa, ob), f in zip(offers, faults):
        engine.step(oa, ob, f)
        engine.dead.clear()
        engine.drain("a")
        engine.drain("b")
    _emit(engine.trace_lines(), args.out, "link_trace.jsonl")
    acc = engine.accounting()
    print(json.dumps(acc), file=sys.stderr)
    return EXIT_OK if acc["unaccounted"] == 0 and acc["silent_drops"] == 0 else EXIT_VIOLATION


def _inputs(text):
    a, b = (int(x) for x in text.split(","))
    return (a, b)


def _model(text):
    kind, _, bound = text.partition(":")
    return model_from_dict({"kind": kind, "bound": bound or 1})


def cmd_adversary(args):
    if args.config:
        return _from_config(args, "adversary")
    protocol = load_protocol(args.protocol) if args.protocol else shipped_protocol("rw_toy")
    inputs = _inputs(args.inputs)
    model = _model(args.model)
    if isinstance(model, Asynchronous):
        rep = run_rw_consensus_under_adversary(inputs, args.steps, args.depth, protocol)
        lines = [str(s) for s in rep.schedule.steps] if rep.schedule else []
        _emit(lines, args.out, "adversary.txt")
        print(f"start {rep.start_valence}; {rep.note}", file=sys.stderr)
        return EXIT_OK if not rep.anomaly else EXIT_VIOLATION
    run = find_bivalent_run(protocol, model, args.steps, inputs, args.depth)
    print(f"{model}: {'bivalent run found' if run else 'no bivalent run'}", file=sys.stderr)
    _emit([str(s) for s in run.steps] if run else [], args.out, "adversary.txt")
    return EXIT_OK


def cmd_consensus(args):
    if args.config:
        return _from_config(args, "consensus")
    if args.primitive == "rw":
        rep = consensus_number_demo(Primitive.RW_REGISTER, k=args.states, toy_steps=0)
        print(rep.note)
        print(json.dumps(dict(sorted(rep.witnesses.items()))))
        return EXIT_OK if rep.ok else EXIT_VIOLATION
    if args.primitive == "swap-register":
        rep = consensus_number_demo(Primitive.SWAP_REGISTER)
        print(rep.note)
        return EXIT_OK if rep.ok else EXIT_VIOLATION
    entries = run_swap_consensus(_inputs(args.inputs))
    lines = [
        json.dumps({"fault": str(e.fault) if e.fault else None,
                    "decisions": [[d.pid, d.value, d.slot] for d in e.decisions],
                    "ok": e.ok}, separators=(",", ":"))
        for e in entries
    ]
    _emit(lines, args.out, "consensus.jsonl")
    bad = sum(not e.ok for e in entries)
    print(f"{len(entries)} sweep entries, {bad} violations", file=sys.stderr)
    return EXIT_OK if not bad else EXIT_VIOLATION


def cmd_mesh(args):
    if args.config:
        return _from_config(args, "mesh")
    mesh = build_mesh(args.n)
    if args.action == "count":
        print(count_spanning_trees(mesh))
        return EXIT_OK
    root = cell_id(mesh, args.root)
    script = load_failure_script(args.failures) if args.failures else []
    run = simulate_failures(mesh, root, script, args.delta_ns)
    lines = run.trace_lines()
    for period in args.poll_ns:
        rep = observer_visibility(run, period)
        lines += [json.dumps({"poll_period_ns": period, "edge": list(e.edge), "visible": e.visible,
                              "min_polls": e.min_polls}, separators=(",", ":"))
                  for e in rep.entries]
    _emit(lines, args.out, "mesh.jsonl")
    return EXIT_OK if run.valid_after_every_heal else EXIT_VIOLATION


def cmd_report(args):
    return _from_config(args, None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bisynclab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--out", help="directory for artifacts (default: stdout)")

    sp = sub.add_parser("petri", help="reachability and property checks for a net file")
    sp.add_argument("action", choices=("reach", "check"), nargs="?", default="check")
    sp.add_argument("netfile", nargs="?")
    common(sp)
    sp.set_defaults(func=cmd_petri)

    sp = sub.add_parser("link", help="run link slots over a fault list")
    sp.add_argument("action", choices=("sim",), nargs="?", default="sim")
    sp.add_argument("--params", help="JSON file with link parameters")
    sp.add_argument("--faults", default="sweep", help="'sweep' or comma list like crash@3:a,none")
    sp.add_argument("--random-slots", type=int, default=0, help="extra slots with seeded random offers")
    sp.add_argument("--seed", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_link)

    sp = sub.add_parser("adversary", help="bivalence-preserving scheduler")
    sp.add_argument("--protocol")
    sp.add_argument("--model", default="asynchronous", help="asynchronous | bisynchronous | synchronous:B")
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--depth", type=int, default=8)
    sp.add_argument("--inputs", default="0,1")
    common(sp)
    sp.set_defaults(func=cmd_adversary)

    sp = sub.add_parser("consensus", help="swap consensus sweep or consensus-number demos")
    sp.add_argument("--primitive", choices=("swap", "swap-register", "rw"), default="swap")
    sp.add_argument("--inputs", default="0,1")
    sp.add_argument("--states", type=int, default=2)
    common(sp)
    sp.set_defaults(func=cmd_consensus)

    sp = sub.add_parser("mesh", help="spanning-tree count or failure/heal simulation")
    sp.add_argument("action", choices=("heal", "count"))
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--root", default="0")
    sp.add_argument("--failures", help="failure script: '<time_ns> <u> <v> Down|Up' per line")
    sp.add_argument("--delta-ns", type=int, default=123)
    sp.add_argument("--poll-ns", type=int, nargs="*", default=[1230])
    common(sp)
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("report", help="run a full config and print the comparison table")
    common(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report" and not args.config:
        print("report needs --config", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:  # noqa: BLE001 - anything else is an error, not a violation
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
