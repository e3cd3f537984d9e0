import json

import pytest

from bisynclab import cli
from bisynclab.harness import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_VIOLATION,
    NOT_MEASURED,
    ConfigError,
    EventLoop,
    ExperimentConfig,
    SimClock,
    format_table,
    load_config,
    run_experiment,
    shipped_config,
    table1_report,
)


@pytest.fixture(scope="module")
def small():
    return run_experiment(shipped_config("demo_small"))


@pytest.fixture(scope="module")
def full():
    return run_experiment(shipped_config("demo_full"))


# -- event loop -------------------------------------------------------------------

def test_events_run_in_time_then_insertion_order():
    loop = EventLoop(SimClock(10))
    seen = []
    loop.handlers["poll"] = lambda ev: seen.append((ev.time, ev.payload))
    loop.schedule(20, "poll", "late")
    loop.schedule(5, "poll", "first")
    loop.schedule(5, "poll", "second")
    loop.run()
    assert seen == [(5, "first"), (5, "second"), (20, "late")]
    assert loop.clock.now == 20 and loop.clock.slot_index == 2


def test_past_event_rejected():
    loop = EventLoop(SimClock())
    loop.handlers["poll"] = lambda ev: loop.schedule(ev.time - 1, "poll")
    loop.schedule(3, "poll")
    with pytest.raises(RuntimeError):
        loop.run()


def test_unknown_event_kind():
    with pytest.raises(ValueError):
        EventLoop(SimClock()).schedule(0, "teleport")


# -- config validation ---------------------------------------------------------------

@pytest.mark.parametrize("doc,path", [
    ({"bogus": 1}, "bogus"),
    ({"seed": "x"}, "seed"),
    ({"timing": {"kind": "psychic"}}, "timing"),
    ({"link": {"params": {"cable_length": 0, "propagation_velocity": 5,
                          "frame_size": 1, "line_rate": 1}}}, "link.params"),
    ({"link": {"faults": ["crash@3:a", "melt@1:b"]}}, "link.faults[1]"),
    ({"mesh": {"n": 1}}, "mesh.n"),
    ({"mesh": {"n": 3, "poll_periods_ns": [0]}}, "mesh.poll_periods_ns"),
    ({"adversary": {"steps": -4}}, "adversary.steps"),
    ({"knowledge": []}, "knowledge"),
])
def test_config_errors_name_the_field(doc, path):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(doc)
    assert err.value.path == path


def test_config_round_trip(tmp_path):
    cfg = shipped_config("demo_small")
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p).to_dict() == cfg.to_dict()


def test_bad_json_is_config_error(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)


# -- runs ----------------------------------------------------------------------------

def test_small_demo_passes(small):
    assert small.exit_code == EXIT_OK
    assert small.summary["violations"] == 0
    assert {"petri_reach.jsonl", "link_trace.jsonl", "adversary.jsonl", "consensus.jsonl",
            "knowledge.jsonl", "mesh.jsonl", "baseline.jsonl", "summary.json",
            "table1.txt"} <= set(small.files)


@pytest.mark.parametrize("name", ["demo_small", "demo_full"])
def test_reruns_are_byte_identical(name, small, full, tmp_path):
    first = small if name == "demo_small" else full
    again = run_experiment(shipped_config(name))
    assert again.files == first.files
    a = first.write(tmp_path / "a")
    b = again.write(tmp_path / "b")
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_link_trace_lines_are_json(small):
    lines = small.files["link_trace.jsonl"].splitlines()
    assert lines and all(isinstance(json.loads(x), dict) for x in lines)


def test_swap_under_async_is_a_scheduler_violation():
    d = shipped_config("demo_small").to_dict()
    d["timing"] = {"kind": "asynchronous"}
    art = run_experiment(ExperimentConfig.from_dict(d), only=["consensus"])
    assert art.exit_code == EXIT_VIOLATION
    (err,) = art.summary["errors"]
    assert err["kind"] == "scheduler-violation" and err["section"] == "consensus"


def test_seed_changes_random_slots():
    d = shipped_config("demo_small").to_dict()
    a = run_experiment(ExperimentConfig.from_dict(d), only=["link"])
    d["seed"] += 1
    b = run_experiment(ExperimentConfig.from_dict(d), only=["link"])
    assert a.files["link_trace.jsonl"] != b.files["link_trace.jsonl"]


# -- the comparison table -----------------------------------------------------------------

def test_table_marks_missing_measurements():
    rows = table1_report({})
    assert len(rows) == 5
    assert all(r.conventional == r.oae == NOT_MEASURED for r in rows)


def test_full_demo_table(full):
    assert full.exit_code == EXIT_OK
    rows = {r.assumption: r for r in table1_report(full.measures)}
    assert set(rows) == {"Asynchrony", "R/W vs swap", "Crash ambiguity", "Message loss", "Knowledge"}
    assert NOT_MEASURED not in format_table(list(rows.values()))
    assert rows["Message loss"].oae.startswith("silent drops = 0;")
    assert "(100%)" in rows["Knowledge"].oae
    assert "no bivalent run exists" in rows["Asynchrony"].oae
    assert "0 violations" in rows["R/W vs swap"].oae
    assert full.measures["baseline"]["silent_drops"] > 0


# -- command line ------------------------------------------------------------------------

def test_cli_petri_check(capsys):
    assert cli.main(["petri", "check"]) == EXIT_OK


def test_cli_link_sweep_to_dir(tmp_path):
    assert cli.main(["link", "sim", "--out", str(tmp_path)]) == EXIT_OK
    assert len((tmp_path / "link_trace.jsonl").read_text().splitlines()) == 97


def test_cli_consensus_rw_exits_clean(capsys):
    assert cli.main(["consensus", "--primitive", "rw"]) == EXIT_OK


def test_cli_mesh_count(capsys):
    assert cli.main(["mesh", "count", "--n", "3"]) == EXIT_OK
    assert "17745" in capsys.readouterr().out


def test_cli_report_requires_config(capsys):
    assert cli.main(["report"]) == EXIT_ERROR


def test_cli_missing_file_is_error(capsys):
    assert cli.main(["report", "--config", "/nonexistent/x.json"]) == EXIT_ERROR


def test_cli_bad_fault_is_error(capsys):
    assert cli.main(["link", "sim", "--faults", "melt@1:a"]) == EXIT_ERROR


def test_cli_async_swap_config_exits_one(tmp_path, capsys):
    d = shipped_config("demo_small").to_dict()
    d["timing"] = {"kind": "asynchronous"}
    d = {k: d[k] for k in ("name", "seed", "timing", "consensus")}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert cli.main(["report", "--config", str(p)]) == EXIT_VIOLATION
    assert "scheduler-violation" in capsys.readouterr().err
