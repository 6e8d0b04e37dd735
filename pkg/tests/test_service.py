"""HTTP endpoint behavior against the in-process app."""
import json
import time

import pytest
from fastapi.testclient import TestClient

from voxloop.service import create_app, default_service_state
from voxloop.session import SessionConfig
from voxloop.workers import WorkerProfile, WorkerRegistry


@pytest.fixture()
def client():
    state = default_service_state(seed=1, seed_pairs=200)
    # deterministic, fast sessions for tests: no tick pacing
    state.session_config = SessionConfig(
        simulated=False, auto_accept_clarifications=False, tick_sleep=0.0)
    app = create_app(state)
    with TestClient(app) as c:
        c.service_state = state
        yield c


def create_session(client, worker="human1"):
    response = client.post("/sessions", json={"worker_id": worker})
    assert response.status_code == 200
    return response.json()["session_id"]


def wait_for_routing(client, session_id, tries=200):
    for _ in range(tries):
        events = client.get(f"/sessions/{session_id}/events/poll",
                            params={"since": 0}).json()["events"]
        if any(e["kind"] == "routing" for e in events):
            return events
        time.sleep(0.01)
    raise AssertionError("routing question never arrived")


def answer_to_terminal(client, session_id, answers):
    out = None
    for answer in answers:
        response = client.post(f"/sessions/{session_id}/routing", json={"answer": answer})
        assert response.status_code == 200
        out = response.json()
    return out


def test_create_session_rejects_blacklisted(client):
    state = client.service_state
    state.worker_registry.add(WorkerProfile(id="bad"))
    state.worker_registry.status["bad"].blacklisted = True
    response = client.post("/sessions", json={"worker_id": "bad"})
    assert response.status_code == 403


def test_sessions_are_isolated(client):
    a = create_session(client, "w1")
    b = create_session(client, "w2")
    client.post(f"/sessions/{a}/command", json={"text": "build a box"})
    wait_for_routing(client, a)
    events_b = client.get(f"/sessions/{b}/events/poll", params={"since": 0}).json()["events"]
    assert all(e["kind"] in ("snapshot",) for e in events_b)
    score_b = client.get(f"/sessions/{b}/score").json()
    assert score_b["n_commands"] == 0


def test_command_cycle_and_status_order(client):
    session_id = create_session(client)
    response = client.post(f"/sessions/{session_id}/command", json={"text": "build a box"})
    assert response.status_code == 200
    assert response.json() == {"accepted": True}
    events = wait_for_routing(client, session_id)
    statuses = [e["data"] for e in events if e["kind"] == "status"]
    appear = [s["phase"] for s in statuses if not s["cleared"]]
    assert appear == ["sending command", "command received",
                      "assistant thinking", "assistant is doing the task"]
    # the timed 500ms clear arrives for "command received"
    for _ in range(100):
        events = client.get(f"/sessions/{session_id}/events/poll",
                            params={"since": 0}).json()["events"]
        cleared = [e["data"]["phase"] for e in events
                   if e["kind"] == "status" and e["data"]["cleared"]]
        if "command received" in cleared:
            break
        time.sleep(0.02)
    assert "command received" in cleared


def test_command_rejected_while_routing_pending(client):
    session_id = create_session(client)
    client.post(f"/sessions/{session_id}/command", json={"text": "dance"})
    wait_for_routing(client, session_id)
    response = client.post(f"/sessions/{session_id}/command", json={"text": "undo"})
    assert response.status_code == 409


def test_empty_command_is_a_400(client):
    session_id = create_session(client)
    response = client.post(f"/sessions/{session_id}/command", json={"text": "  "})
    assert response.status_code == 400


def test_stop_is_accepted_while_working(client):
    session_id = create_session(client)
    client.post(f"/sessions/{session_id}/command", json={"text": "build a tower"})
    response = client.post(f"/sessions/{session_id}/command", json={"text": "stop"})
    assert response.status_code == 200
    wait_for_routing(client, session_id)


def test_routing_flow_to_terminal_and_funnel(client):
    session_id = create_session(client)
    client.post(f"/sessions/{session_id}/command", json={"text": "build a box"})
    wait_for_routing(client, session_id)
    out = answer_to_terminal(client, session_id, [False, False])
    assert out == {"terminal": "nlu_error"}
    funnel = client.get("/admin/funnel").json()
    assert funnel["all_commands"] == 1
    assert funnel["marked_nlu"] == 1
    tasks = client.get("/admin/annotations").json()["tasks"]
    assert len(tasks) == 1
    assert tasks[0]["kind"] == "nlu"


def test_routing_without_question_is_409(client):
    session_id = create_session(client)
    response = client.post(f"/sessions/{session_id}/routing", json={"answer": True})
    assert response.status_code == 409


def test_annotation_round_trip(client):
    session_id = create_session(client)
    client.post(f"/sessions/{session_id}/command", json={"text": "build a box"})
    wait_for_routing(client, session_id)
    answer_to_terminal(client, session_id, [False, False])
    task = client.get("/admin/annotations").json()["tasks"][0]
    bad = client.post(f"/annotations/{task['task_id']}", json={"lf": "not json"})
    assert bad.status_code == 400
    from voxloop.grammar import GeneratorGrammar
    from voxloop.lf import canonicalize

    form = GeneratorGrammar().oracle_parse("build a box")
    good = client.post(f"/annotations/{task['task_id']}", json={"lf": canonicalize(form)})
    assert good.status_code == 200
    again = client.post(f"/annotations/{task['task_id']}", json={"lf": canonicalize(form)})
    assert again.status_code == 409


def test_gate_endpoint_hides_reasons(client):
    session_id = create_session(client)
    worker_view = client.get(f"/sessions/{session_id}/gate").json()
    assert worker_view == {"allowed": False}
    admin_view = client.get(f"/admin/gate/{session_id}").json()
    assert admin_view["allowed"] is False
    assert admin_view["reasons"]


def test_event_stream_replays_with_snapshot_first(client):
    session_id = create_session(client)
    client.post(f"/sessions/{session_id}/command", json={"text": "dance"})
    wait_for_routing(client, session_id)
    lines = []
    with client.stream("GET", f"/sessions/{session_id}/events?limit=4") as response:
        for line in response.iter_lines():
            if line.startswith("data: "):
                lines.append(json.loads(line[6:]))
    assert lines[0]["kind"] == "snapshot"
    assert lines[1]["kind"] == "snapshot"  # seq-0 event is the construction snapshot
    assert "world" in lines[0]["data"]
    assert len(lines) == 5  # initial snapshot + 4 streamed events


def test_unknown_session_is_404(client):
    assert client.get("/sessions/nope/score").status_code == 404
    assert client.post("/sessions/nope/command", json={"text": "hi"}).status_code == 404
