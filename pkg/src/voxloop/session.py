"""One worker-agent session: command cycle, status events, routing, scoring.

Each session owns a world and an agent and serializes all mutations through
one lock (the per-session executor). The event log is append-only; stream
consumers replay it from a sequence number after an initial snapshot.
"""
from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import scoring
from .interpreter import Agent
from .lf import DialogueType, canonicalize
from .parser import ParserModel, parse
from .pipeline import ROUTING_QUESTIONS, TERMINALS, CommandRecord, routing_next
from .vision import SceneConfig, gen_scene, iou
from .world import Pose, VoxelGrid, snapshot_doc, snapshot_to_text

STATUS_SENDING = "sending command"
STATUS_RECEIVED = "command received"
STATUS_THINKING = "assistant thinking"
STATUS_DOING = "assistant is doing the task"
RECEIVED_CLEAR_MS = 500


class RoutingPending(Exception):
    pass


class NoPendingRouting(Exception):
    pass


class EmptyCommand(Exception):
    pass


class SessionClosed(Exception):
    pass


@dataclass(frozen=True)
class SessionConfig:
    world_dims: tuple[int, int, int] = (32, 16, 32)
    ground_id: int = 10
    seed_scene: bool = False
    scene: SceneConfig = SceneConfig()
    scene_seed: int = 0
    min_seconds: float = scoring.DEFAULT_MIN_SECONDS
    min_commands: int = scoring.DEFAULT_MIN_COMMANDS
    base_pay: float = 3.0
    per_point: float = 0.5
    max_ticks_per_command: int = 3000
    simulated: bool = True  # simulated sessions drive a virtual clock
    seconds_per_command: float = 75.0
    # simulated sessions accept the first pointed candidate; live sessions
    # leave the clarification open for the player's yes/no
    auto_accept_clarifications: bool = True
    tick_sleep: float = 0.0  # live pacing between ticks, seconds


class SimClock:
    def __init__(self, start: float = 0.0):
        self.now = start

    def advance(self, seconds: float) -> None:
        self.now += seconds

    def __call__(self) -> float:
        return self.now


def flat_world(dims, ground_id) -> VoxelGrid:
    grid = VoxelGrid(dims)
    for x in range(dims[0]):
        for z in range(dims[2]):
            grid._set((x, 0, z), ground_id)
    return grid


class Session:
    """State machine for one live or simulated interaction."""

    _ids = itertools.count(1)

    def __init__(self, worker_id: str, parser_model: ParserModel,
                 config: SessionConfig = SessionConfig(), seg_model=None,
                 iteration: int = 0, global_history: Optional[list[str]] = None,
                 session_id: Optional[str] = None):
        self.id = session_id or f"s{next(self._ids):06d}"
        self.worker_id = worker_id
        self.config = config
        self.iteration = iteration
        self.parser_model = parser_model
        self.lock = threading.RLock()
        self.clock: Callable[[], float] = SimClock() if config.simulated else time.monotonic
        self.started_at = self.clock()
        if config.seed_scene:
            grid, objects = gen_scene(config.scene, config.scene_seed)
            self.scene_objects = objects
            world = grid
            if world.dims != config.world_dims:
                pass  # scene dims win; the agent adapts
        else:
            world = flat_world(config.world_dims, config.ground_id)
            self.scene_objects = []
        center = (world.dims[0] // 2, 1, world.dims[2] // 2)
        self.agent = Agent(world, Pose(*center), seg_model=seg_model,
                           event_sink=self._emit)
        self.player_pose = Pose(max(center[0] - 2, 0), 1, center[2])
        self.agent.perceive()
        self.events: list[dict] = []
        self._event_seq = 0
        self._event_cond = threading.Condition(self.lock)
        self.status_phase = "idle"
        self.routing_state: Optional[str] = None
        self.commands: list[str] = []
        self.records: list[CommandRecord] = []
        self.pending_record: Optional[CommandRecord] = None
        self.global_history = global_history if global_history is not None else []
        self.score = scoring.stoplight(0, 0.0, 0.0)
        self.closed = False
        self._pending_clears: list[Callable[[], None]] = []
        self._open_record: Optional[CommandRecord] = None
        self._submit_status = "tasks"
        self._done_mark = 0
        self._emit("snapshot", self.snapshot())

    # --- events ---------------------------------------------------------

    def _emit(self, kind: str, data) -> dict:
        with self.lock:
            event = {"seq": self._event_seq, "kind": kind, "data": data}
            self._event_seq += 1
            self.events.append(event)
            self._event_cond.notify_all()
            return event

    def events_since(self, seq: int) -> list[dict]:
        with self.lock:
            return [e for e in self.events if e["seq"] >= seq]

    def wait_for_events(self, seq: int, timeout: float = 10.0) -> list[dict]:
        with self._event_cond:
            self._event_cond.wait_for(lambda: self._event_seq > seq, timeout=timeout)
            return self.events_since(seq)

    def snapshot(self) -> dict:
        doc = snapshot_doc(self.agent.world, self.agent.pose, self.player_pose)
        return {
            "session_id": self.id,
            "world": doc,
            "chats": [
                {"speaker": c.speaker, "text": c.text} for c in self.agent.memory.chats
            ],
            "status_phase": self.status_phase,
            "routing_question": self.routing_question(),
            "score": self.score_payload(),
        }

    def score_payload(self) -> dict:
        return {
            "score": round(self.score.score, 4),
            "band": self.score.band,
            "n_commands": self.score.n_commands,
            "bonus": round(scoring.bonus(self.score.score, self.config.base_pay,
                                         self.config.per_point), 4),
        }

    # --- the command cycle ------------------------------------------------

    def routing_question(self) -> Optional[dict]:
        if self.routing_state is None:
            return None
        return {"id": self.routing_state, "text": ROUTING_QUESTIONS[self.routing_state]}

    def _once(self, fn: Callable[[], None]) -> Callable[[], None]:
        fired = [False]

        def run() -> None:
            with self.lock:
                if not fired[0]:
                    fired[0] = True
                    fn()

        return run

    def _flush_pending_clears(self) -> None:
        for fn in self._pending_clears:
            fn()
        self._pending_clears.clear()

    def submit_command(self, text: str, schedule_clear=None) -> Optional[CommandRecord]:
        """Run one command through its cycle; leaves a routing question pending.

        `schedule_clear` (callable taking delay_ms, fn) lets the service defer
        the "command received" clear event; the simulated path clears inline.
        "stop" is accepted while a task runs (it interrupts the open command and
        returns None); "yes"/"no" answer an open clarification. The lock is
        released between ticks so interrupts can land mid-task.
        """
        with self.lock:
            if self.closed:
                raise SessionClosed(self.id)
            normalized = text.strip()
            if not normalized:
                raise EmptyCommand("empty command")
            word = normalized.lower().strip("!. ")
            if self.agent.clarification is not None and word in ("yes", "no"):
                self.agent.memory.add_chat("player", normalized, self.agent.tick_count)
                self._emit("chat", {"speaker": "player", "text": normalized})
                self._submit_status = self.agent.answer_clarification(
                    word == "yes", self.player_pose)
                record = self._open_record
            else:
                is_stop = word == "stop"
                if self.routing_state is not None and not is_stop:
                    raise RoutingPending("answer the error questions first")
                if self.agent.busy or self._open_record is not None:
                    if is_stop:
                        self.agent.memory.add_chat("player", normalized, self.agent.tick_count)
                        self._emit("chat", {"speaker": "player", "text": normalized})
                        self.agent.stop_running()
                        if self.agent.clarification is not None:
                            # stopping abandons the open question and its command
                            self.agent.clarification = None
                            self._maybe_finish_command(self._open_record)
                        return None
                    raise RoutingPending("the assistant is still working")
                record = self._begin_command(normalized, schedule_clear)
        self._drain()
        return self._maybe_finish_command(record)

    def _precheck(self, text: str) -> None:
        """Raise exactly what submit_command would raise, without side effects."""
        with self.lock:
            if self.closed:
                raise SessionClosed(self.id)
            normalized = text.strip()
            if not normalized:
                raise EmptyCommand("empty command")
            word = normalized.lower().strip("!. ")
            if self.agent.clarification is not None and word in ("yes", "no"):
                return
            is_stop = word == "stop"
            if is_stop:
                return
            if self.routing_state is not None:
                raise RoutingPending("answer the error questions first")
            if self.agent.busy or self._open_record is not None:
                raise RoutingPending("the assistant is still working")

    def _begin_command(self, normalized: str, schedule_clear) -> CommandRecord:
        """Pre-execution half of the cycle: status events, parse, task queueing."""
        self._flush_pending_clears()
        self._emit("status", {"phase": STATUS_SENDING, "cleared": False})
        self.agent.memory.add_chat("player", normalized, self.agent.tick_count)
        self._emit("chat", {"speaker": "player", "text": normalized})
        self._emit("status", {"phase": STATUS_SENDING, "cleared": True})
        self._emit("status", {"phase": STATUS_RECEIVED, "cleared": False})
        clear_received = self._once(
            lambda: self._emit("status", {"phase": STATUS_RECEIVED, "cleared": True}))
        if schedule_clear is not None:
            self._pending_clears.append(clear_received)
            schedule_clear(RECEIVED_CLEAR_MS, clear_received)
        else:
            clear_received()
        self.status_phase = STATUS_THINKING
        self._emit("status", {"phase": STATUS_THINKING, "cleared": False})
        form = parse(self.parser_model, normalized)
        record = CommandRecord(
            session_id=self.id,
            iteration=self.iteration,
            text=normalized,
            parse_canonical=canonicalize(form),
        )
        self._emit("status", {"phase": STATUS_THINKING, "cleared": True})
        self.status_phase = STATUS_DOING
        self._emit("status", {"phase": STATUS_DOING, "cleared": False})
        if self.agent.seg_model is not None:
            record.vision_snapshot = snapshot_to_text(
                snapshot_doc(self.agent.world, self.agent.pose, self.player_pose))
        self._done_mark = len(self.agent.done_log)
        self._submit_status = self.agent.submit_form(form, self.player_pose, normalized)
        self._open_record = record
        return record

    def _drain(self) -> None:
        """Advance tasks, releasing the lock between ticks for interrupts."""
        ticks = 0
        while ticks < self.config.max_ticks_per_command:
            with self.lock:
                if self.agent.clarification is not None:
                    if not self.config.auto_accept_clarifications:
                        return
                    self._submit_status = self.agent.answer_clarification(
                        True, self.player_pose)
                    continue
                if not self.agent.busy:
                    return
                self.agent.tick()
                ticks += 1
            if self.config.tick_sleep:
                time.sleep(self.config.tick_sleep)

    def _maybe_finish_command(self, record: Optional[CommandRecord]) -> Optional[CommandRecord]:
        """Post-execution half: outcome, score, and the routing question."""
        with self.lock:
            if record is None or self._open_record is not record:
                return record
            if self.agent.clarification is not None:
                return record  # cycle stays open for the player's yes/no
            self._open_record = None
            failed = self._submit_status == "failed" or any(
                t.status == "failed" for t in self.agent.done_log[self._done_mark:])
            record.outcome = "failed" if failed else "ok"
            if self.agent.vision_referents:
                record.vision_query = self.agent.vision_referents[0][0]
                record.vision_chosen = self.agent.vision_referents[0][1]
            self._emit("status", {"phase": STATUS_DOING, "cleared": True})
            self.status_phase = "idle"
            self.commands.append(record.text)
            if isinstance(self.clock, SimClock) and self.config.simulated:
                self.clock.advance(self.config.seconds_per_command)
            self._refresh_score()
            self.pending_record = record
            self.routing_state = "q1"
            self._emit("routing", self.routing_question())
            return record

    def answer_routing(self, answer: bool) -> str:
        """Advance the routing tree; on a terminal, commit the command record."""
        with self.lock:
            if self.routing_state is None:
                raise NoPendingRouting("no question is pending")
            nxt = routing_next(self.routing_state, answer)
            if nxt in TERMINALS:
                self.routing_state = None
                record = self.pending_record
                self.pending_record = None
                record.set_terminal(nxt)
                self.records.append(record)
                self._refresh_score()
                self._emit("terminal", {"terminal": nxt})
            else:
                self.routing_state = nxt
                self._emit("routing", self.routing_question())
            return nxt

    def _refresh_score(self) -> None:
        history = [c for c in self.global_history]
        creativity_values = [
            scoring.creativity(c, history) for c in self.commands
        ] or [0.0]
        self.score = scoring.stoplight(
            len(self.commands),
            scoring.diversity(self.commands),
            sum(creativity_values) / len(creativity_values),
        )
        self._emit("score", self.score_payload())

    # --- gating / wrap-up --------------------------------------------------

    def elapsed(self) -> float:
        return self.clock() - self.started_at

    def gate(self) -> scoring.GateResult:
        return scoring.submission_gate(
            self.elapsed(), len(self.commands),
            self.config.min_seconds, self.config.min_commands)

    def close(self) -> None:
        with self.lock:
            self.closed = True
            self._emit("closed", {"session_id": self.id})
