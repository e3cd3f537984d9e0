import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisynclab.knowledge import (
    AnalysisError,
    EpistemicState,
    KnowledgeError,
    KripkeFrame,
    Trace,
    async_traces,
    bisync_traces,
    evaluate_knowledge,
    global_state,
    net_trace,
    observe,
    summarize,
    sync_traces,
)
from bisynclab.petri import build_dual_diamond
from bisynclab.timing import Asynchronous, Bisynchronous, Synchronous


@pytest.fixture(scope="module")
def bisync_frame():
    return KripkeFrame(bisync_traces(), clocked=True)


@pytest.fixture(scope="module")
def async_set():
    return async_traces(12)


# -- observation ------------------------------------------------------------------

def test_alice_sees_full_register_after_commit():
    net = build_dual_diamond()
    tr = net_trace(net, ["a_ping", "b_accept"])
    view = observe("a", tr, 2)
    assert view.get("reg") == 1
    assert 2 in tr.boundaries and tr.facts[2]


def test_bob_starts_with_empty_register():
    tr = net_trace(build_dual_diamond(), [])
    assert observe("b", tr, 0).get("reg") == 0


def test_views_never_include_shared_or_peer_parts():
    tr = net_trace(build_dual_diamond(), ["a_ping"])
    names = {n for n, _ in observe("a", tr, 1).visible}
    assert names == {"idle", "wait", "reg"}


def test_observe_errors():
    tr = net_trace(build_dual_diamond(), [])
    with pytest.raises(KnowledgeError):
        observe("c", tr, 0)
    with pytest.raises(IndexError):
        observe("a", tr, 5)


values = st.one_of(st.integers(-3, 3), st.booleans(), st.none())


@settings(max_examples=200)
@given(st.dictionaries(st.text("xyz", min_size=1, max_size=2), values, max_size=4),
       st.dictionaries(st.text("xyz", min_size=1, max_size=2), values, max_size=4),
       st.dictionaries(st.text("xyz", min_size=1, max_size=2), values, max_size=4))
def test_peer_perturbation_leaves_view_unchanged(mine, peer1, peer2):
    def state(peer):
        comps = {("a", k): v for k, v in mine.items()}
        comps.update({("b", k): v for k, v in peer.items()})
        return global_state(comps)

    t1 = Trace((state(peer1),), (False,))
    t2 = Trace((state(peer2),), (False,))
    assert observe("a", t1, 0) == observe("a", t2, 0)
    once = observe("a", t1, 0)
    assert observe("a", Trace((global_state({("a", k): v for k, v in once.visible}),), (False,)), 0) == once


# -- bisynchronous -----------------------------------------------------------------

def test_common_knowledge_at_every_bisync_boundary(bisync_frame):
    for t, tr in enumerate(bisync_frame.traces):
        for i in tr.boundaries:
            s = bisync_frame.state_at(t, i)
            assert s.common_knowledge, tr.label
            assert s.chain_holds()


def test_committed_slot_example():
    traces = bisync_traces()
    clean = next(tr for tr in traces if tr.label == "clean" and tr.facts[1])
    s = evaluate_knowledge(Bisynchronous(), clean, 1, traces)
    assert s == EpistemicState((True, True), (True, True), True)


def test_non_boundary_index_rejected():
    traces = bisync_traces()
    with pytest.raises(KnowledgeError):
        evaluate_knowledge(Bisynchronous(), traces[0], 0, traces)


# -- asynchronous ------------------------------------------------------------------

def test_no_common_knowledge_anywhere_async(async_set):
    frame = KripkeFrame(async_set, clocked=False)
    assert len(async_set) == 4096
    assert not any(frame.ck)


def test_sender_cannot_know_unacknowledged_delivery(async_set):
    frame = KripkeFrame(async_set, clocked=False)
    tr = next(t for t in async_set if t.label.startswith("d" + "." * 11))
    t = frame.traces.index(tr)
    for i in range(1, len(tr)):
        assert tr.facts[i]
        s = frame.state_at(t, i)
        assert s.knows_own_outcome[0] is False
        assert s.common_knowledge is False


def test_async_summary_chain(async_set):
    summary = summarize(Asynchronous(), async_set, every_index=True)
    assert summary.common_knowledge == 0
    assert summary.chain_violations == 0
    assert summary.evaluated == 4096 * 13


def test_trace_ceiling():
    with pytest.raises(AnalysisError):
        KripkeFrame(async_traces(4), clocked=False, ceiling=3)


# -- synchronous -------------------------------------------------------------------

@pytest.mark.parametrize("bound", [1, 2, 4])
def test_sync_sender_knows_nothing_about_commit(bound):
    traces = sync_traces(bound)
    intact = next(tr for tr in traces if tr.label == f"d={bound},intact")
    s = evaluate_knowledge(Synchronous(bound), intact, bound, traces)
    assert s.knows_own_outcome == (False, True)
    assert s.asymmetric
    assert not s.common_knowledge
    assert s.chain_holds()


@pytest.mark.parametrize("model", [Bisynchronous(), Synchronous(3)])
def test_chain_holds_everywhere(model):
    assert summarize(model, every_index=True).chain_violations == 0
