import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisynclab.link import (
    CreditRefused,
    CreditState,
    Delta,
    Direction,
    FaultKind,
    FaultSpec,
    LinkEngine,
    LinkParams,
    LinkValidationError,
    Message,
    Obs,
    Outcome,
    ProtocolError,
    Reconciled,
    RegisterPair,
    SilenceVerdict,
    compute_delta,
    credit_consume,
    credit_grant,
    fault_sweep,
    resolve_silence,
    run_slot,
    simulate_slot,
)

from oracles import delta_ns

PARAMS = LinkParams(cable_length=2, propagation_velocity=5, frame_size=512, line_rate=10**10)
M = Message(7, b"payload")


# -- delta ----------------------------------------------------------------------

def test_delta_pure_propagation():
    p = LinkParams(cable_length=100, propagation_velocity=5, frame_size=0, line_rate=10**9)
    assert compute_delta(p).nanoseconds == 1000


def test_delta_matches_oracle_and_lands_in_hundreds_of_ns():
    d = compute_delta(PARAMS).nanoseconds
    assert d == delta_ns(2, 5, 512, 10**10) == 123
    assert 100 <= d < 1000


def test_processing_allowance_adds():
    p = LinkParams(2, 5, 512, 10**10, processing_allowance=40)
    assert compute_delta(p).nanoseconds == 163


@pytest.mark.parametrize("field", ["cable_length", "propagation_velocity", "line_rate"])
@pytest.mark.parametrize("bad", [0, -1])
def test_non_positive_params_rejected(field, bad):
    kw = dict(cable_length=2, propagation_velocity=5, frame_size=512, line_rate=10**10)
    kw[field] = bad
    with pytest.raises(LinkValidationError):
        LinkParams(**kw)


def test_delta_must_be_positive():
    with pytest.raises(LinkValidationError):
        Delta(0)


lengths = st.integers(1, 10_000)
frames = st.integers(0, 100_000)
rates = st.integers(10**6, 10**11)


@settings(max_examples=300)
@given(lengths, lengths, frames, rates)
def test_delta_monotone_in_length(l1, l2, f, r):
    lo, hi = sorted((l1, l2))
    a = compute_delta(LinkParams(lo, 5, f, r)).nanoseconds
    b = compute_delta(LinkParams(hi, 5, f, r)).nanoseconds
    assert a <= b
    if hi > lo:
        # whole-metre steps at 5 ns/m move Δ by at least 10 ns
        assert a < b
    assert b == delta_ns(hi, 5, f, r)


@settings(max_examples=300)
@given(lengths, frames, frames, rates)
def test_delta_monotone_in_frame_size(l, f1, f2, r):
    lo, hi = sorted((f1, f2))
    a = compute_delta(LinkParams(l, 5, lo, r)).nanoseconds
    b = compute_delta(LinkParams(l, 5, hi, r)).nanoseconds
    assert a <= b
    exact_gap = 2 * Fraction(hi - lo) * 10**9 / r
    if exact_gap >= 1:
        assert a < b


@settings(max_examples=300)
@given(lengths, st.integers(1, 100_000), rates, rates)
def test_delta_decreasing_in_line_rate(l, f, r1, r2):
    lo, hi = sorted((r1, r2))
    slow = compute_delta(LinkParams(l, 5, f, lo)).nanoseconds
    fast = compute_delta(LinkParams(l, 5, f, hi)).nanoseconds
    assert fast <= slow
    exact_gap = 2 * Fraction(f) * 10**9 * (Fraction(1, lo) - Fraction(1, hi))
    if exact_gap >= 1:
        assert fast < slow


# -- silence ----------------------------------------------------------------------

def test_silence_verdicts():
    d = Delta(123)
    assert resolve_silence(0, 123, d) is SilenceVerdict.NEGATIVE_DEFINITIVE
    assert resolve_silence(0, 0, d) is SilenceVerdict.PENDING
    assert resolve_silence(0, 122, d) is SilenceVerdict.PENDING
    assert resolve_silence(0, 50, d, update_arrived=True) is SilenceVerdict.RECEIVED


@given(st.integers(0, 10**6), st.integers(1, 10**6))
def test_silence_has_no_third_verdict(elapsed, delta):
    v = resolve_silence(3, elapsed, Delta(delta))
    assert v is (SilenceVerdict.NEGATIVE_DEFINITIVE if elapsed >= delta else SilenceVerdict.PENDING)


# -- slots -----------------------------------------------------------------------------

def test_clean_slot_commits_both():
    pair, out = run_slot(RegisterPair(), M, None)
    assert out.tag is Outcome.COMMITTED
    assert pair.a == pair.b == Reconciled(M, None)
    assert pair.pattern() == "(M,M)"


def test_cut_mid_slot_aborts_both():
    rec = simulate_slot(RegisterPair(), M, None, FaultSpec(FaultKind.LINK_CUT, 8, "a"))
    assert rec.pair.pattern() == "(Empty,Empty)"
    assert [v.outcome for v in rec.views] == [Outcome.ABORTED, Outcome.ABORTED]


def test_idle_slot_is_flagged_abort():
    pair, out = run_slot(RegisterPair(), None, None)
    assert out.tag is Outcome.ABORTED and out.idle
    assert out.label() == "idle"
    assert pair.pattern() == "(Empty,Empty)"


def test_mixed_entry_pair_is_protocol_error():
    with pytest.raises(ProtocolError):
        run_slot(RegisterPair(Reconciled(M, None), None), None, None)


def test_fault_tick_outside_slot_rejected():
    with pytest.raises(LinkValidationError):
        run_slot(RegisterPair(), M, M, FaultSpec(FaultKind.CRASH, 16, "a"))


def test_sweep_has_every_position():
    sweep = fault_sweep()
    assert len(sweep) == 1 + 3 * 16 * 2
    assert sweep[0] is None
    assert len(set(map(str, sweep[1:]))) == 96


@pytest.mark.parametrize("fault", fault_sweep(), ids=lambda f: str(f) if f else "none")
def test_sweep_outcomes_identical_at_both_ends(fault):
    rec = simulate_slot(RegisterPair(), Message(1), Message(2), fault)
    a, b = rec.views
    assert a.outcome is b.outcome
    assert rec.pair.pattern() in ("(M,M)", "(Empty,Empty)")
    assert (rec.outcome.tag is Outcome.COMMITTED) == (fault is None)


def test_crash_at_tick_zero_looks_like_silence():
    rec = simulate_slot(RegisterPair(), Message(1), Message(2), FaultSpec(FaultKind.CRASH, 0, "b"))
    a, b = rec.views
    assert not b.alive
    assert a.peer_silent
    assert set(a.observations) == {Obs.SILENT}


def test_corruption_seen_by_receiver_only_reported_by_echo():
    rec = simulate_slot(RegisterPair(), Message(1), Message(2), FaultSpec(FaultKind.CORRUPTION, 5, "a"))
    a, b = rec.views
    assert Obs.CORRUPT in b.observations
    assert Obs.CORRUPT not in a.observations
    assert a.echo is False


def test_fault_spec_round_trip():
    f = FaultSpec(FaultKind.LINK_CUT, 9, "b")
    assert FaultSpec.parse(str(f)) == f
    with pytest.raises(LinkValidationError):
        FaultSpec(FaultKind.CRASH, 1, "c")


# -- credits ----------------------------------------------------------------------------------

def test_credit_consume_and_refuse():
    c = CreditState(1, 1, 4)
    c = credit_consume(c, Direction.A_TO_B)
    assert c.credits_a_to_b == 0
    with pytest.raises(CreditRefused):
        credit_consume(c, Direction.A_TO_B)


def test_grant_beyond_capacity_rejected():
    with pytest.raises(LinkValidationError):
        credit_grant(CreditState.full(2), Direction.B_TO_A)


def test_refused_frame_never_enters_link():
    eng = LinkEngine(PARAMS, buffer_capacity=1)
    eng.step(Message(1), None)
    rec = eng.step(Message(2), None)  # receiver has not drained: no credit
    assert rec.offers == (None, None)
    acc = eng.accounting()
    assert acc["refused"] == 1 and acc["silent_drops"] == 0 and acc["unaccounted"] == 0


# -- engine -----------------------------------------------------------------------------------

faults = st.one_of(
    st.none(),
    st.builds(FaultSpec, st.sampled_from(list(FaultKind)), st.integers(0, 15), st.sampled_from("ab")),
)
slot = st.tuples(st.booleans(), st.booleans(), faults, st.booleans())


@settings(max_examples=150, deadline=None)
@given(st.lists(slot, min_size=1, max_size=40), st.integers(1, 5))
def test_engine_accounts_for_every_frame(slots, cap):
    eng = LinkEngine(PARAMS, buffer_capacity=cap)
    for k, (sa, sb, fault, drain) in enumerate(slots):
        rec = eng.step(Message(k) if sa else None, Message(k) if sb else None, fault)
        assert rec.pair.pattern() in ("(M,M)", "(Empty,Empty)")
        assert rec.views[0].outcome is rec.views[1].outcome
        assert rec.resolved_ns - rec.start_ns == eng.delta.nanoseconds
        if drain:
            eng.drain("a")
            eng.drain("b")
    acc = eng.accounting()
    assert acc["offered"] == acc["committed"] + acc["refused"] + acc["aborted_known"]
    assert acc["silent_drops"] == 0
    assert acc["overflow"] == 0


def test_dead_endpoint_stays_dead():
    eng = LinkEngine(PARAMS)
    eng.step(Message(1), Message(2), FaultSpec(FaultKind.CRASH, 4, "a"))
    rec = eng.step(Message(3), Message(4))
    assert not rec.views[0].alive
    assert rec.views[1].peer_silent
    assert rec.outcome.tag is Outcome.ABORTED


def test_trace_field_order_and_determinism():
    def run():
        eng = LinkEngine(PARAMS)
        for f in fault_sweep()[:10]:
            eng.step(Message(1), Message(2), f)
            eng.dead.clear()
            eng.drain("a")
            eng.drain("b")
        return eng.trace_lines()

    first = run()
    assert first == run()
    keys = list(json.loads(first[0]))
    assert keys == ["slot_index", "offers", "refused", "fault", "outcome", "registers",
                    "credits", "start_ns", "resolved_ns"]
