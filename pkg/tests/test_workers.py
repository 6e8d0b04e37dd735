"""Simulated worker behavior: command streams, marking noise, annotations."""
import random

import pytest

from voxloop.grammar import GeneratorGrammar
from voxloop.lf import canonicalize, tokenize
from voxloop.pipeline import routing_next
from voxloop.workers import (
    CannotAnnotate,
    SimWorker,
    WorkerProfile,
    WorkerRegistry,
    default_worker_pool,
    false_mark_rate,
)

GRAMMAR = GeneratorGrammar()


def worker(**kwargs):
    return SimWorker(WorkerProfile(id=kwargs.pop("id", "w0"), **kwargs))


def run_routing(answers):
    state = "q1"
    for answer in answers:
        state = routing_next(state, answer == "yes")
    return state


def test_honest_worker_commands_parse_under_the_oracle():
    w = worker()
    for _ in range(50):
        text, truth = w.next_command(GRAMMAR, iteration=0)
        assert truth is not None
        assert canonicalize(GRAMMAR.oracle_parse(text)) == canonicalize(truth)


def test_honest_worker_uses_unlocked_templates_only():
    w = worker()
    texts0 = {w.next_command(GRAMMAR, 0)[0] for _ in range(300)}
    assert not any(t.startswith("construct") for t in texts0)
    w5 = worker(id="w5")
    texts5 = {w5.next_command(GRAMMAR, 5)[0] for _ in range(600)}
    assert any(t.startswith("construct") for t in texts5)


def test_lazy_worker_repeats_one_command():
    w = worker(mode="lazy")
    texts = {w.next_command(GRAMMAR, 3)[0] for _ in range(10)}
    assert len(texts) == 1


def test_adversarial_worker_emits_garbage():
    w = worker(mode="adversarial", garbage_rate=1.0)
    text, truth = w.next_command(GRAMMAR, 0)
    assert truth is None
    assert GRAMMAR.oracle_parse(text) is None


def test_worker_stream_is_deterministic():
    a = SimWorker(WorkerProfile(id="w1", seed=4))
    b = SimWorker(WorkerProfile(id="w1", seed=4))
    for _ in range(20):
        assert a.next_command(GRAMMAR, 2) == b.next_command(GRAMMAR, 2)


def test_perfect_marking_reproduces_truth():
    w = worker(mark_precision=1.0, mark_recall=1.0)
    for terminal in ("no_error", "nlu_error", "vision_error", "other_error"):
        assert run_routing(w.mark_feedback(terminal)) == terminal


def test_zero_recall_never_marks_nlu():
    w = worker(mark_recall=0.0)
    for _ in range(200):
        assert run_routing(w.mark_feedback("nlu_error")) != "nlu_error"


def test_marking_noise_matches_configured_rates():
    # Stream at the assumed base rate: empirical precision/recall within 2pp.
    w = worker(mark_precision=0.89, mark_recall=0.43, assumed_error_rate=0.5, seed=7)
    rng = random.Random(13)
    marked_true = marked = true_total = 0
    for _ in range(10000):
        truth = "nlu_error" if rng.random() < 0.5 else "no_error"
        terminal = run_routing(w.mark_feedback(truth))
        if truth == "nlu_error":
            true_total += 1
        if terminal == "nlu_error":
            marked += 1
            if truth == "nlu_error":
                marked_true += 1
    assert abs(marked_true / marked - 0.89) < 0.02
    assert abs(marked_true / true_total - 0.43) < 0.02


def test_false_mark_rate_formula():
    profile = WorkerProfile(id="w", mark_precision=0.89, mark_recall=0.43,
                            assumed_error_rate=0.5)
    f = false_mark_rate(profile)
    # precision = b*r / (b*r + (1-b)*f) must equal the configured value
    precision = 0.5 * 0.43 / (0.5 * 0.43 + 0.5 * f)
    assert abs(precision - 0.89) < 1e-9


def test_annotate_nlu_oracle_is_exact():
    w = worker(annotation_error_rate=0.0)
    text, truth = w.next_command(GRAMMAR, 0)
    got = w.annotate_nlu(text, truth, GRAMMAR)
    assert canonicalize(got) == canonicalize(truth)


def test_annotate_nlu_rejects_garbage():
    w = worker()
    with pytest.raises(CannotAnnotate):
        w.annotate_nlu("xqzt brfl", None, GRAMMAR)


def test_annotation_error_rate_close_to_configured():
    w = worker(annotation_error_rate=0.1, seed=3)
    corrupted = 0
    for _ in range(1000):
        text, truth = w.next_command(GRAMMAR, 0)
        got = w.annotate_nlu(text, truth, GRAMMAR)
        if canonicalize(got) != canonicalize(truth):
            corrupted += 1
    assert abs(corrupted / 1000 - 0.1) < 0.03


def test_corrupted_annotations_still_resolve_on_the_text():
    from voxloop.lf import iter_spans, resolve_span

    w = worker(annotation_error_rate=1.0, seed=5)
    for _ in range(50):
        text, truth = w.next_command(GRAMMAR, 0)
        got = w.annotate_nlu(text, truth, GRAMMAR)
        for span in iter_spans(got):
            resolve_span(span, [text])  # must not raise


def test_qualification_behavior():
    assert worker().qualification() is True
    fails = sum(
        0 if SimWorker(WorkerProfile(id=f"a{i}", mode="adversarial", seed=i)).qualification()
        else 1
        for i in range(200)
    )
    assert 60 < fails < 140  # around the 0.5 default


def test_blacklist_after_three_red_sessions():
    registry = WorkerRegistry([WorkerProfile(id="w0")])
    for _ in range(2):
        registry.record_session_band("w0", "red")
    assert not registry.is_blacklisted("w0")
    registry.record_session_band("w0", "red")
    assert registry.is_blacklisted("w0")


def test_green_session_resets_the_streak():
    registry = WorkerRegistry([WorkerProfile(id="w0")])
    registry.record_session_band("w0", "red")
    registry.record_session_band("w0", "red")
    registry.record_session_band("w0", "green")
    registry.record_session_band("w0", "red")
    assert not registry.is_blacklisted("w0")


def test_registry_round_trip(tmp_path):
    registry = WorkerRegistry(default_worker_pool(4))
    registry.record_session_band("w001", "red")
    path = tmp_path / "workers.jsonl"
    registry.save(path)
    loaded = WorkerRegistry.load(path)
    assert set(loaded.status) == set(registry.status)
    assert loaded.status["w001"].consecutive_red == 1
