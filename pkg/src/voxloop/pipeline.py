"""Error routing, command records, dataset tranches, and funnel statistics.

The registry keeps one tranche per loop iteration, split into train/valid/test,
with language and vision data in parallel stores. Tranche files are written
once and never rewritten; unions R_n / V_n / T_n are derived on read.
"""
from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import vision as vision_mod
from .lf import LogicalForm, from_canonical

TERMINALS = ("no_error", "nlu_error", "vision_error", "other_error")

ROUTING_QUESTIONS = {
    "q1": "Did the assistant correctly do what you asked?",
    "q2": "Did the assistant understand your command?",
    "q3": "Did the assistant correctly identify the objects you referred to?",
}

DEFAULT_SPLIT_RATIOS = (0.7, 0.15, 0.15)


class AlreadyTerminal(Exception):
    pass


def routing_next(state: str, answer: bool) -> str:
    """One step of the forced-choice error routing tree.

    Returns the next question id or a terminal. Yes at q1 ends with no_error;
    no at q2 is an NLU error; no at q3 a vision error; yes at q3 leaves the
    residual other_error.
    """
    if state in TERMINALS:
        raise AlreadyTerminal(state)
    if state == "q1":
        return "no_error" if answer else "q2"
    if state == "q2":
        return "q3" if answer else "nlu_error"
    if state == "q3":
        return "other_error" if answer else "vision_error"
    raise ValueError(f"unknown routing state {state!r}")


@dataclass
class CommandRecord:
    session_id: str
    iteration: int
    text: str
    parse_canonical: str
    outcome: str = "ok"  # ok | failed | clarify
    terminal: Optional[str] = None
    valid: Optional[bool] = None
    annotation_canonical: Optional[str] = None
    # hidden oracle context carried through the simulated pipeline
    truth_canonical: Optional[str] = None
    vision_snapshot: Optional[str] = None
    vision_query: Optional[str] = None
    vision_chosen: Optional[frozenset] = None
    vision_truth_mask: Optional[frozenset] = None
    vision_annotation: Optional[frozenset] = None

    def set_terminal(self, terminal: str) -> None:
        if self.terminal is not None:
            raise AlreadyTerminal(f"terminal already {self.terminal}")
        self.terminal = terminal


@dataclass
class ErrorRecord:
    kind: str  # nlu | vision
    text: str
    parse_canonical: Optional[str] = None   # nlu: the rejected parse
    snapshot: Optional[str] = None          # vision: world state document
    annotation: Optional[str] = None        # canonical form / sorted voxel list json
    annotated: bool = False
    task_id: str = ""


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def dedup(records: Sequence[CommandRecord]) -> list[CommandRecord]:
    """First occurrence per normalized text, input order preserved."""
    seen = set()
    out = []
    for record in records:
        key = normalize_text(record.text)
        if key in seen:
            continue
        seen.add(key)
        out.append(record)
    return out


def dedup_and_filter(records: Sequence[CommandRecord]) -> list[CommandRecord]:
    """Unique commands that the annotator judged expressible in the DSL."""
    return [r for r in dedup(records) if r.valid is not False]


def split_tranche(pairs: Sequence, ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
                  seed: int = 0) -> tuple[list, list, list]:
    """Seeded shuffle then contiguous split; sizes floor(r*n) with the test
    split absorbing the remainder."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    shuffled = list(pairs)
    random.Random(seed).shuffle(shuffled)
    n = len(shuffled)
    n_train = int(ratios[0] * n)
    n_valid = int(ratios[1] * n)
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_valid],
        shuffled[n_train + n_valid :],
    )


def annotate_queue(queue: Sequence[ErrorRecord], annotate, budget: Optional[int] = None) -> int:
    """Annotate up to `budget` open records in place; returns how many were done.

    `annotate` maps an ErrorRecord to its annotation payload, or raises
    CannotAnnotate to mark the record processed-but-unannotatable. Records
    beyond the budget stay queued for later runs.
    """
    from .workers import CannotAnnotate

    done = 0
    for record in queue:
        if record.annotated:
            continue
        if budget is not None and done >= budget:
            break
        try:
            record.annotation = annotate(record)
        except CannotAnnotate:
            record.annotation = None
        record.annotated = True
        done += 1
    return done


@dataclass(frozen=True)
class FunnelStats:
    all_commands: int
    dedup_valid: int
    marked_agent_errors: int
    marked_nlu: int
    marked_nlu_annotated: int
    marked_true_nlu: int
    all_known_nlu: int

    @property
    def precision(self) -> Optional[float]:
        if self.marked_nlu_annotated == 0:
            return None
        return self.marked_true_nlu / self.marked_nlu_annotated

    @property
    def recall_estimate(self) -> Optional[float]:
        if self.all_known_nlu == 0:
            return None
        return self.marked_true_nlu / self.all_known_nlu

    def as_rows(self) -> list[tuple[str, int]]:
        return [
            ("all_commands", self.all_commands),
            ("dedup_valid", self.dedup_valid),
            ("marked_agent_errors", self.marked_agent_errors),
            ("marked_nlu", self.marked_nlu),
            ("marked_nlu_annotated", self.marked_nlu_annotated),
            ("marked_true_nlu", self.marked_true_nlu),
            ("all_known_nlu", self.all_known_nlu),
        ]


def funnel_stats(records: Sequence[CommandRecord]) -> FunnelStats:
    """Nested funnel counts over the command stream.

    A marked NLU error is "true" when its annotation differs from the parse;
    the recall denominator covers every annotated valid command whose
    annotation differs from the parse, marked or not.
    """
    valid = dedup_and_filter(records)
    marked_errors = [r for r in valid if r.terminal in ("nlu_error", "vision_error", "other_error")]
    marked_nlu = [r for r in valid if r.terminal == "nlu_error"]
    marked_annotated = [r for r in marked_nlu if r.annotation_canonical is not None]
    marked_true = [r for r in marked_annotated if r.annotation_canonical != r.parse_canonical]
    all_known = [
        r for r in valid
        if r.annotation_canonical is not None and r.annotation_canonical != r.parse_canonical
    ]
    return FunnelStats(
        all_commands=len(records),
        dedup_valid=len(valid),
        marked_agent_errors=len(marked_errors),
        marked_nlu=len(marked_nlu),
        marked_nlu_annotated=len(marked_annotated),
        marked_true_nlu=len(marked_true),
        all_known_nlu=len(all_known),
    )


# ---------------------------------------------------------------------------
# tranche registry

NluPair = tuple[str, LogicalForm]


@dataclass
class Tranche:
    n: int
    train: list
    valid: list
    test: list

    def all_pairs(self) -> list:
        return list(self.train) + list(self.valid) + list(self.test)


class DatasetRegistry:
    """Per-iteration tranches for both modalities, committed atomically."""

    def __init__(self):
        self.nlu: dict[int, Tranche] = {}
        self.vision: dict[int, Tranche] = {}

    @property
    def max_n(self) -> int:
        return max(self.nlu, default=-1)

    def commit_tranche(self, n: int, nlu: Tranche, vision: Tranche) -> None:
        if n in self.nlu:
            raise ValueError(f"tranche {n} already committed")
        if n != self.max_n + 1:
            raise ValueError(f"tranche {n} out of order, expected {self.max_n + 1}")
        self.nlu[n] = nlu
        self.vision[n] = vision

    def _union(self, store: dict[int, Tranche], n: int, split: str) -> list:
        out = []
        for i in range(n + 1):
            if i in store:
                out.extend(getattr(store[i], split))
        return out

    def r_n(self, n: int, kind: str = "nlu") -> list:
        return self._union(self.nlu if kind == "nlu" else self.vision, n, "train")

    def v_n(self, n: int, kind: str = "nlu") -> list:
        return self._union(self.nlu if kind == "nlu" else self.vision, n, "valid")

    def t_n(self, n: int, kind: str = "nlu") -> list:
        return self._union(self.nlu if kind == "nlu" else self.vision, n, "test")

    def t_all(self, kind: str = "nlu") -> list:
        return self.t_n(self.max_n, kind)

    # --- persistence ---------------------------------------------------

    def save_tranche(self, root, n: int, manifest_extra: Optional[dict] = None) -> None:
        """Write one tranche to registry/tranche_NNN (write-once layout)."""
        directory = os.path.join(root, f"tranche_{n:03d}")
        tmp = directory + ".tmp"
        os.makedirs(tmp, exist_ok=True)
        counts = {}
        for split in ("train", "valid", "test"):
            pairs = getattr(self.nlu[n], split)
            counts[f"nlu_{split}"] = len(pairs)
            with open(os.path.join(tmp, f"nlu_{split}.jsonl"), "w") as f:
                for text, form in pairs:
                    row = {"text": text, "lf": _canonical(form), "tranche_id": n}
                    f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
            examples = getattr(self.vision[n], split)
            counts[f"vision_{split}"] = len(examples)
            vision_mod.save_examples(os.path.join(tmp, f"vision_{split}.jsonl"), examples)
        manifest = {"n": n, "counts": counts}
        manifest.update(manifest_extra or {})
        with open(os.path.join(tmp, "manifest.json"), "w") as f:
            json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, directory)

    @classmethod
    def load(cls, root) -> "DatasetRegistry":
        registry = cls()
        n = 0
        while True:
            directory = os.path.join(root, f"tranche_{n:03d}")
            if not os.path.isdir(directory):
                break
            nlu_splits, vision_splits = [], []
            for split in ("train", "valid", "test"):
                pairs = []
                with open(os.path.join(directory, f"nlu_{split}.jsonl")) as f:
                    for line in f:
                        if line.strip():
                            row = json.loads(line)
                            pairs.append((row["text"], from_canonical(row["lf"])))
                nlu_splits.append(pairs)
                vision_splits.append(
                    vision_mod.load_examples(os.path.join(directory, f"vision_{split}.jsonl")))
            registry.commit_tranche(
                n, Tranche(n, *nlu_splits), Tranche(n, *vision_splits))
            n += 1
        return registry


def _canonical(form) -> str:
    from .lf import canonicalize

    return canonicalize(form) if isinstance(form, LogicalForm) else str(form)
