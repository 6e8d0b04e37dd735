"""The automated improvement loop: sessions, routing, annotation, retraining.

Each iteration runs simulated sessions against the deployed models, routes
worker feedback, annotates the (deduplicated) commands, commits a new tranche,
retrains the episode model on everything collected so far, and optionally
redeploys. Evaluation of baseline / episode / re-biased models over the
tranche test sets happens after the loop from the committed registry.
"""
from __future__ import annotations

import json
import os
import random
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

from . import parser as parser_mod
from . import vision as vision_mod
from .grammar import GeneratorGrammar
from .lf import canonicalize, from_canonical, tokenize
from .pipeline import (
    CommandRecord,
    DatasetRegistry,
    ErrorRecord,
    FunnelStats,
    Tranche,
    annotate_queue,
    dedup,
    dedup_and_filter,
    funnel_stats,
    split_tranche,
)
from .parser import ParserModel, rebias, train
from .session import Session, SessionConfig
from .vision import SceneConfig, SegConfig, VisionExample, iou
from .workers import CannotAnnotate, SimWorker, WorkerProfile, WorkerRegistry, default_worker_pool


def derive_seed(master: int, tag: str) -> int:
    """Process-stable child seed."""
    return zlib.crc32(f"{master}:{tag}".encode("utf-8"))


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 10
    sessions_per_iteration: int = 30
    commands_per_session: int = 5
    seed: int = 0
    seed_pairs: int = 400
    redeploy_from: int = 6          # sessions at this iteration first see a retrained model
    vision_start_iteration: int = 11
    annotate_all: bool = True       # False reproduces the errors-only feedback mode
    annotation_budget: Optional[int] = None
    annotator_error_rate: float = 0.0
    rebias_factor: float = 2.0
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    workers: tuple[WorkerProfile, ...] = ()
    session: SessionConfig = SessionConfig()
    scene: SceneConfig = SceneConfig()
    seg_config: SegConfig = SegConfig(in_channels=16, hidden_dim=8, text_dim=64)
    seg_bootstrap_scenes: int = 60
    seg_epochs: int = 40
    seg_lr: float = 1.0


@dataclass
class IterationReport:
    n: int
    sessions: int
    commands: int
    funnel: FunnelStats
    tranche_nlu: int
    tranche_vision: int
    redeployed: bool
    model_size: int


@dataclass
class LoopState:
    config: LoopConfig
    grammar: GeneratorGrammar
    registry: DatasetRegistry
    baseline: ParserModel
    deployed: ParserModel
    seg_baseline: Optional[object]
    seg_deployed: Optional[object]
    workers: list[SimWorker]
    worker_registry: WorkerRegistry
    annotator: SimWorker
    global_history: list[str]
    records: list[CommandRecord] = field(default_factory=list)
    reports: list[IterationReport] = field(default_factory=list)


def _bootstrap_vision_examples(config: LoopConfig) -> list[VisionExample]:
    """Rule-based seed data: positives with one negative per scene."""
    examples: list[VisionExample] = []
    base = derive_seed(config.seed, "vision-bootstrap")
    for i in range(config.seg_bootstrap_scenes):
        grid, objects = vision_mod.gen_scene(config.scene, base + i)
        rng = random.Random(f"describe:{base}:{i}")
        obj = objects[rng.randrange(len(objects))]
        examples.append(VisionExample(
            grid, vision_mod.describe(obj.kind, obj.color, rng), obj.mask, 0))
        examples.append(vision_mod.gen_negative(objects, config.scene, base + i, grid, 0))
    return examples


def init_state(config: LoopConfig) -> LoopState:
    grammar = GeneratorGrammar()
    registry = DatasetRegistry()
    pairs0 = grammar.generate(config.seed_pairs, iteration=0,
                              seed=derive_seed(config.seed, "tranche0"))
    train0, valid0, test0 = split_tranche(
        pairs0, config.split_ratios, derive_seed(config.seed, "split:0"))
    vision_active = config.vision_start_iteration <= config.iterations
    if vision_active:
        vision_pairs = _bootstrap_vision_examples(config)
        vtrain, vvalid, vtest = split_tranche(
            vision_pairs, config.split_ratios, derive_seed(config.seed, "vsplit:0"))
    else:
        vtrain, vvalid, vtest = [], [], []
    registry.commit_tranche(0, Tranche(0, train0, valid0, test0),
                            Tranche(0, vtrain, vvalid, vtest))
    baseline = train(ParserModel(rebias_factor=config.rebias_factor), train0, 0)
    seg_baseline = None
    if vision_active and vtrain:
        seg_baseline = vision_mod.init_seg_model(
            config.seg_config, derive_seed(config.seed, "seg-init"))
        seg_baseline = vision_mod.train_seg(
            seg_baseline, vtrain, config.seg_epochs, config.seg_lr)
    profiles = config.workers or tuple(default_worker_pool(seed=derive_seed(config.seed, "workers")))
    return LoopState(
        config=config,
        grammar=grammar,
        registry=registry,
        baseline=baseline,
        deployed=baseline,
        seg_baseline=seg_baseline,
        seg_deployed=seg_baseline,
        workers=[SimWorker(p) for p in profiles],
        worker_registry=WorkerRegistry(profiles),
        annotator=SimWorker(WorkerProfile(
            id="annotator", annotation_error_rate=config.annotator_error_rate,
            seed=derive_seed(config.seed, "annotator"))),
        global_history=[],
    )


def _match_scene_object(query: str, scene_objects, color_vocab) -> frozenset:
    """Oracle mask for a referring expression over a seeded scene.

    The query names attributes; an object must match every attribute the
    query actually mentions. No mention of any scene attribute means the
    query refers to nothing present (the truth mask is empty).
    """
    from .memory import canonical_name
    from .vision import SHAPE_KINDS

    words = {canonical_name(w) for w in tokenize(query)}
    wanted_kinds = words & set(SHAPE_KINDS)
    wanted_colors = words & set(color_vocab)
    if not wanted_kinds and not wanted_colors:
        return frozenset()
    for obj in scene_objects:
        if wanted_kinds and obj.kind not in wanted_kinds:
            continue
        if wanted_colors and obj.color not in wanted_colors:
            continue
        return obj.mask
    return frozenset()


def _truth_terminal(record: CommandRecord, session: Session) -> str:
    if record.truth_canonical is None:
        return "other_error"
    if record.parse_canonical != record.truth_canonical:
        return "nlu_error"
    if record.vision_query is not None and session.scene_objects:
        oracle = _match_scene_object(record.vision_query, session.scene_objects,
                                     session.config.scene.colors)
        chosen = record.vision_chosen or frozenset()
        ok = iou(chosen, oracle) >= 0.5 if oracle else not chosen
        if not ok:
            record.vision_truth_mask = oracle
            return "vision_error"
    if record.outcome == "failed":
        return "other_error"
    return "no_error"


def run_sessions(state: LoopState, iteration: int) -> list[CommandRecord]:
    """One iteration's batch of simulated interactions."""
    config = state.config
    vision_live = iteration >= config.vision_start_iteration
    records: list[CommandRecord] = []
    eligible = [
        w for w in state.workers
        if not state.worker_registry.is_blacklisted(w.profile.id)
    ]
    qualified = []
    for worker in eligible:
        status = state.worker_registry.status[worker.profile.id]
        if status.qualified is None:
            status.qualified = worker.qualification()
        if status.qualified:
            qualified.append(worker)
    if not qualified:
        return records
    for k in range(config.sessions_per_iteration):
        worker = qualified[k % len(qualified)]
        session_config = replace(
            config.session,
            seed_scene=vision_live,
            scene=config.scene,
            scene_seed=derive_seed(config.seed, f"scene:{iteration}:{k}"),
        )
        session = Session(
            worker.profile.id,
            state.deployed,
            session_config,
            seg_model=state.seg_deployed if vision_live else None,
            iteration=iteration,
            global_history=state.global_history,
            session_id=f"i{iteration:03d}k{k:03d}",
        )
        for _ in range(config.commands_per_session):
            text, truth = worker.next_command(state.grammar, iteration)
            record = session.submit_command(text)
            record.truth_canonical = canonicalize(truth) if truth is not None else None
            terminal = _truth_terminal(record, session)
            for answer in worker.mark_feedback(terminal):
                session.answer_routing(answer == "yes")
        band = session.score.band
        state.worker_registry.record_session_band(worker.profile.id, band)
        state.global_history.extend(session.commands)
        session.close()
        records.extend(session.records)
    return records


def annotate_records(state: LoopState, records: list[CommandRecord]) -> None:
    """Attach ground-truth annotations (and validity verdicts) to unique commands."""
    config = state.config
    budget = config.annotation_budget
    done = 0
    for record in dedup(records):
        marked = record.terminal in ("nlu_error", "vision_error")
        if not (config.annotate_all or marked):
            continue
        if budget is not None and done >= budget:
            break
        truth = from_canonical(record.truth_canonical) if record.truth_canonical else None
        try:
            form = state.annotator.annotate_nlu(record.text, truth, state.grammar)
            record.annotation_canonical = canonicalize(form)
            record.valid = True
        except CannotAnnotate:
            record.valid = False
        if record.terminal == "vision_error" and record.vision_snapshot is not None:
            from .world import snapshot_from_text

            grid, _, _ = snapshot_from_text(record.vision_snapshot)
            record.vision_annotation = state.annotator.annotate_vision(
                record.vision_truth_mask or frozenset(), grid)
        done += 1


def build_tranche(state: LoopState, records: list[CommandRecord], n: int) -> tuple[Tranche, Tranche]:
    config = state.config
    nlu_pairs = []
    vision_examples = []
    for record in dedup_and_filter(records):
        if record.annotation_canonical is not None:
            nlu_pairs.append((record.text, from_canonical(record.annotation_canonical)))
        if record.vision_annotation is not None and record.vision_snapshot is not None:
            from .world import snapshot_from_text

            grid, _, _ = snapshot_from_text(record.vision_snapshot)
            mask = frozenset(p for p in record.vision_annotation if not grid.is_air(p))
            vision_examples.append(VisionExample(
                grid, record.vision_query or record.text, mask, n))
    train_split, valid_split, test_split = split_tranche(
        nlu_pairs, config.split_ratios, derive_seed(config.seed, f"split:{n}"))
    vtrain, vvalid, vtest = split_tranche(
        vision_examples, config.split_ratios, derive_seed(config.seed, f"vsplit:{n}"))
    return (Tranche(n, train_split, valid_split, test_split),
            Tranche(n, vtrain, vvalid, vtest))


def build_episode_model(state: LoopState, n: int) -> ParserModel:
    """Fresh model trained on R_n (the union of train splits 0..n)."""
    model = ParserModel(rebias_factor=state.config.rebias_factor)
    for i in range(n + 1):
        if i in state.registry.nlu:
            model = train(model, state.registry.nlu[i].train, i)
    return model


def run_iteration(state: LoopState, n: int) -> IterationReport:
    """interaction -> routing -> annotation -> tranche -> retrain -> redeploy."""
    config = state.config
    records = run_sessions(state, n)
    annotate_records(state, records)
    nlu_tranche, vision_tranche = build_tranche(state, records, n)
    state.registry.commit_tranche(n, nlu_tranche, vision_tranche)
    state.records.extend(records)
    episode = build_episode_model(state, n)
    redeployed = False
    if n + 1 >= config.redeploy_from:
        state.deployed = episode
        redeployed = True
    if vision_tranche.train and state.seg_deployed is not None:
        vision_train = state.registry.r_n(n, "vision")
        state.seg_deployed = vision_mod.train_seg(
            vision_mod.init_seg_model(config.seg_config, derive_seed(config.seed, "seg-init")),
            vision_train, config.seg_epochs, config.seg_lr)
    report = IterationReport(
        n=n,
        sessions=config.sessions_per_iteration,
        commands=len(records),
        funnel=funnel_stats(records),
        tranche_nlu=len(nlu_tranche.all_pairs()),
        tranche_vision=len(vision_tranche.all_pairs()),
        redeployed=redeployed,
        model_size=len(episode.exemplars),
    )
    state.reports.append(report)
    return report


@dataclass(frozen=True)
class EvalRow:
    iteration: int
    model: str
    testset: str
    task: str
    accuracy: float
    n_items: int


def _tagged_test_items(registry: DatasetRegistry, kind: str = "nlu"):
    store = registry.nlu if kind == "nlu" else registry.vision
    items = []
    for n in sorted(store):
        for pair in store[n].test:
            items.append((n, pair))
    return items


def _nlu_item_correct(model: ParserModel, items) -> list[bool]:
    out = []
    for _, (text, truth) in items:
        got = parser_mod.parse(model, text)
        out.append(canonicalize(got) == canonicalize(truth))
    return out


def _subset_accuracy(items, correct, upto: int) -> tuple[float, int]:
    hits = [c for (n, _), c in zip(items, correct) if n <= upto]
    if not hits:
        return 1.0, 0
    return sum(hits) / len(hits), len(hits)


def eval_matrix(state: LoopState) -> list[EvalRow]:
    """Baseline / episode / re-biased accuracy on T_0, T_n, T_all per iteration."""
    registry = state.registry
    rows: list[EvalRow] = []
    items = _tagged_test_items(registry, "nlu")
    max_n = registry.max_n
    baseline_correct = _nlu_item_correct(state.baseline, items)
    for n in range(1, max_n + 1):
        episode = build_episode_model(state, n)
        rebiased = rebias(episode)
        episode_correct = _nlu_item_correct(episode, items)
        rebiased_correct = _nlu_item_correct(rebiased, items)
        for model_name, correct in (
            ("baseline", baseline_correct),
            ("episode", episode_correct),
            ("rebiased", rebiased_correct),
        ):
            for testset, upto in (("T_0", 0), ("T_n", n), ("T_all", max_n)):
                accuracy, count = _subset_accuracy(items, correct, upto)
                rows.append(EvalRow(n, model_name, testset, "nlu", accuracy, count))
    rows.extend(_vision_eval_rows(state))
    return rows


def _vision_eval_rows(state: LoopState) -> list[EvalRow]:
    registry = state.registry
    items = _tagged_test_items(registry, "vision")
    if not items or state.seg_baseline is None:
        return []
    rows = []
    max_n = registry.max_n
    config = state.config

    def correctness(model):
        out = []
        for _, ex in items:
            predicted = vision_mod.predict_mask(model, ex.grid, ex.text)
            if ex.mask:
                out.append(vision_mod.iou(predicted, ex.mask) >= 0.5)
            else:
                out.append(not predicted)
        return out

    baseline_correct = correctness(state.seg_baseline)
    for n in range(1, max_n + 1):
        vision_train = registry.r_n(n, "vision")
        if not vision_train:
            continue
        episode = vision_mod.train_seg(
            vision_mod.init_seg_model(config.seg_config, derive_seed(config.seed, "seg-init")),
            vision_train, config.seg_epochs, config.seg_lr)
        episode_correct = correctness(episode)
        for model_name, correct in (("baseline", baseline_correct),
                                    ("episode", episode_correct)):
            for testset, upto in (("T_0", 0), ("T_n", n), ("T_all", max_n)):
                accuracy, count = _subset_accuracy(items, correct, upto)
                rows.append(EvalRow(n, model_name, testset, "vision", accuracy, count))
    return rows


def write_outputs(state: LoopState, rows: list[EvalRow], out_dir: str) -> None:
    """Registry, reports, and model dumps under out_dir (reproducible bytes)."""
    os.makedirs(out_dir, exist_ok=True)
    registry_dir = os.path.join(out_dir, "registry")
    os.makedirs(registry_dir, exist_ok=True)
    for n in sorted(state.registry.nlu):
        state.registry.save_tranche(registry_dir, n, {"seed": state.config.seed})
    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    with open(os.path.join(reports_dir, "curves.tsv"), "w") as f:
        f.write("iteration\tmodel\ttestset\ttask\taccuracy\tn_items\n")
        for row in rows:
            f.write(f"{row.iteration}\t{row.model}\t{row.testset}\t{row.task}"
                    f"\t{row.accuracy:.6f}\t{row.n_items}\n")
    with open(os.path.join(reports_dir, "funnel.tsv"), "w") as f:
        f.write("iteration\tall\tdedup_valid\tmarked_errors\tmarked_nlu"
                "\tmarked_nlu_annotated\tmarked_true_nlu\tall_known_nlu"
                "\tprecision\trecall_estimate\n")
        for report in state.reports:
            s = report.funnel
            precision = "" if s.precision is None else f"{s.precision:.6f}"
            recall = "" if s.recall_estimate is None else f"{s.recall_estimate:.6f}"
            f.write(f"{report.n}\t{s.all_commands}\t{s.dedup_valid}"
                    f"\t{s.marked_agent_errors}\t{s.marked_nlu}\t{s.marked_nlu_annotated}"
                    f"\t{s.marked_true_nlu}\t{s.all_known_nlu}\t{precision}\t{recall}\n")
    models_dir = os.path.join(out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)
    parser_mod.save_parser_model(state.baseline, os.path.join(models_dir, "baseline.jsonl"))
    parser_mod.save_parser_model(state.deployed, os.path.join(models_dir, "deployed.jsonl"))
    if state.registry.max_n >= 1:
        final = build_episode_model(state, state.registry.max_n)
        parser_mod.save_parser_model(final, os.path.join(models_dir, "episode_final.jsonl"))
        parser_mod.save_parser_model(rebias(final), os.path.join(models_dir, "rebiased_final.jsonl"))
    manifest = {
        "iterations": state.config.iterations,
        "sessions_per_iteration": state.config.sessions_per_iteration,
        "commands_per_session": state.config.commands_per_session,
        "seed": state.config.seed,
        "redeploy_from": state.config.redeploy_from,
        "tranches": state.registry.max_n + 1,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def run_loop(config: LoopConfig, out_dir: Optional[str] = None) -> tuple[LoopState, list[EvalRow]]:
    """The whole protocol: init, N iterations, evaluation matrix, outputs."""
    state = init_state(config)
    for n in range(1, config.iterations + 1):
        run_iteration(state, n)
    rows = eval_matrix(state)
    if out_dir is not None:
        write_outputs(state, rows, out_dir)
    return state, rows
