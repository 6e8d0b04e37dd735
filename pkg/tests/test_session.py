"""The session command cycle: status events, routing, scoring, isolation."""
import pytest

from voxloop.grammar import GeneratorGrammar
from voxloop.loop import derive_seed
from voxloop.parser import ParserModel, train
from voxloop.session import (
    STATUS_DOING,
    STATUS_RECEIVED,
    STATUS_SENDING,
    STATUS_THINKING,
    EmptyCommand,
    NoPendingRouting,
    RoutingPending,
    Session,
    SessionConfig,
)

GRAMMAR = GeneratorGrammar()


@pytest.fixture(scope="module")
def model():
    pairs = GRAMMAR.generate(300, iteration=0, seed=derive_seed(0, "tranche0"))
    return train(ParserModel(), pairs, 0)


def make_session(model, **kwargs):
    return Session("w0", model, SessionConfig(**kwargs), global_history=[])


def status_events(session, phase=None):
    events = [e for e in session.events if e["kind"] == "status"]
    if phase is not None:
        events = [e for e in events if e["data"]["phase"] == phase]
    return events


def run_routing_to(session, terminal):
    answers = {
        "no_error": [True],
        "nlu_error": [False, False],
        "vision_error": [False, True, False],
        "other_error": [False, True, True],
    }[terminal]
    out = None
    for answer in answers:
        out = session.answer_routing(answer)
    return out


def test_command_cycle_emits_the_four_statuses_in_order(model):
    session = make_session(model)
    session.submit_command("build a box")
    phases = [e["data"]["phase"] for e in status_events(session) if not e["data"]["cleared"]]
    assert phases == [STATUS_SENDING, STATUS_RECEIVED, STATUS_THINKING, STATUS_DOING]
    # each status also clears, in the synchronous path immediately
    cleared = [e["data"]["phase"] for e in status_events(session) if e["data"]["cleared"]]
    assert cleared == [STATUS_SENDING, STATUS_RECEIVED, STATUS_THINKING, STATUS_DOING]


def test_routing_question_pushed_after_command(model):
    session = make_session(model)
    session.submit_command("build a box")
    assert session.routing_question()["id"] == "q1"
    with pytest.raises(RoutingPending):
        session.submit_command("build a cube")


def test_stop_is_accepted_while_routing_pending(model):
    session = make_session(model)
    session.submit_command("build a box")
    assert session.routing_question() is not None
    # stop bypasses the routing guard (nothing is running, so it just chats)
    session.submit_command("stop")


def test_routing_terminal_commits_record(model):
    session = make_session(model)
    record = session.submit_command("build a box")
    assert run_routing_to(session, "no_error") == "no_error"
    assert session.records == [record]
    assert record.terminal == "no_error"
    assert session.routing_question() is None


def test_answer_routing_without_question_raises(model):
    session = make_session(model)
    with pytest.raises(NoPendingRouting):
        session.answer_routing(True)


def test_empty_command_rejected(model):
    session = make_session(model)
    with pytest.raises(EmptyCommand):
        session.submit_command("   ")


def test_score_stream_updates_after_each_command(model):
    session = make_session(model)
    session.submit_command("build a box")
    run_routing_to(session, "no_error")
    scores = [e for e in session.events if e["kind"] == "score"]
    assert scores
    assert scores[-1]["data"]["n_commands"] == 1
    session.submit_command("dig a moat around the fort")
    assert [e for e in session.events if e["kind"] == "score"][-1]["data"]["n_commands"] == 2


def test_stoplight_band_matches_score(model):
    session = make_session(model)
    for text in ["build a box", "dig a moat around the fort", "what is that",
                 "destroy the tower", "spawn a dome here", "dance"]:
        session.submit_command(text)
        run_routing_to(session, "no_error")
    payload = session.score_payload()
    from voxloop import scoring

    expected_band = ("green" if payload["score"] >= scoring.GREEN_THRESHOLD
                     else "yellow" if payload["score"] >= scoring.YELLOW_THRESHOLD
                     else "red")
    assert payload["band"] == expected_band
    assert payload["bonus"] == pytest.approx(3.0 + 0.5 * payload["score"], abs=1e-3)


def test_gate_opens_after_five_minutes_and_enough_commands(model):
    session = make_session(model)
    assert not session.gate().allowed
    for text in ["build a box", "dig a pit", "what is that", "dance", "undo"]:
        session.submit_command(text)
        run_routing_to(session, "no_error")
    # five commands x 75 simulated seconds > 300s
    assert session.gate().allowed


def test_session_isolation(model):
    a = make_session(model)
    b = make_session(model)
    a.submit_command("build a box")
    assert len(a.agent.world.cells) != len(b.agent.world.cells)
    assert b.events[-1]["kind"] == "snapshot"
    assert a.score_payload()["n_commands"] != b.score_payload()["n_commands"]


def test_event_order_per_command(model):
    session = make_session(model)
    session.submit_command("build a box")
    run_routing_to(session, "no_error")
    first_count = len(session.events)
    session.submit_command("dance")
    # all of command 2's status events come after every command-1 event
    second = [e for e in session.events[first_count:] if e["kind"] == "status"]
    assert len(second) == 8


def test_late_subscriber_sees_snapshot_then_replay(model):
    session = make_session(model)
    session.submit_command("build a box")
    replay = session.events_since(0)
    assert replay[0]["kind"] == "snapshot"
    kinds = {e["kind"] for e in replay}
    assert {"status", "chat", "routing"} <= kinds


def test_world_deltas_streamed(model):
    session = make_session(model)
    session.submit_command("build a box")
    deltas = [e for e in session.events if e["kind"] == "delta"]
    assert len(deltas) == 27  # side-3 cube, one block per tick
