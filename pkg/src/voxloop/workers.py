"""Simulated crowd workers: command issuing, noisy error marking, oracle annotation.

Marking noise is calibrated so that, over a stream with the profile's assumed
base error rate, the empirical precision and recall of "marked as NLU error"
match the configured values. Annotations come from the grammar oracle and are
corrupted at the configured rate.
"""
from __future__ import annotations

import json
import random
import string
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

from .grammar import GeneratorGrammar
from .lf import LogicalForm, tokenize
from .parser import realign_spans

TERMINAL_ANSWERS = {
    "no_error": ("yes",),
    "nlu_error": ("no", "no"),
    "vision_error": ("no", "yes", "no"),
    "other_error": ("no", "yes", "yes"),
}

DEFAULT_BLACKLIST_STREAK = 3


class CannotAnnotate(Exception):
    pass


@dataclass(frozen=True)
class WorkerProfile:
    id: str
    mode: str = "honest"  # honest | lazy | adversarial
    mark_precision: float = 0.89
    mark_recall: float = 0.43
    annotation_error_rate: float = 0.0
    garbage_rate: float = 0.5          # adversarial: chance a command is noise
    assumed_error_rate: float = 0.5    # base rate behind the precision calibration
    qualification_fail_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("mark_precision", "mark_recall", "annotation_error_rate",
                     "garbage_rate", "assumed_error_rate", "qualification_fail_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.mode not in ("honest", "lazy", "adversarial"):
            raise ValueError(f"unknown mode {self.mode!r}")


def false_mark_rate(profile: WorkerProfile) -> float:
    """P(mark nlu | not an nlu error) that realizes the configured precision."""
    p, r, b = profile.mark_precision, profile.mark_recall, profile.assumed_error_rate
    if p <= 0.0:
        return 1.0
    if b >= 1.0:
        return 0.0
    return min(1.0, b * r * (1.0 - p) / (p * (1.0 - b)))


LAZY_COMMAND = "build a box"


class SimWorker:
    """Deterministic behavior stream for one worker profile."""

    def __init__(self, profile: WorkerProfile):
        self.profile = profile
        self.rng = random.Random(f"worker:{profile.id}:{profile.seed}")

    def next_command(self, grammar: GeneratorGrammar, iteration: int) -> tuple[str, Optional[LogicalForm]]:
        """A command text plus its hidden ground-truth form (None for garbage)."""
        mode = self.profile.mode
        if mode == "lazy":
            return LAZY_COMMAND, grammar.oracle_parse(LAZY_COMMAND)
        if mode == "adversarial" and self.rng.random() < self.profile.garbage_rate:
            length = self.rng.randint(2, 5)
            word = lambda: "".join(self.rng.choice(string.ascii_lowercase) for _ in range(4))
            return " ".join(word() for _ in range(length)), None
        template = self.rng.choice(grammar.unlocked(iteration))
        return grammar.instantiate(template, self.rng)

    def mark_feedback(self, truth_terminal: str) -> tuple[str, ...]:
        """Routing answers; noisy around the truth per precision/recall settings."""
        r = self.rng.random()
        recall = self.profile.mark_recall
        if truth_terminal == "no_error":
            if r < false_mark_rate(self.profile):
                return TERMINAL_ANSWERS["nlu_error"]
            return TERMINAL_ANSWERS["no_error"]
        if truth_terminal == "nlu_error":
            if r < recall:
                return TERMINAL_ANSWERS["nlu_error"]
            # missed attribution: the failure was seen, but routed elsewhere
            return TERMINAL_ANSWERS["other_error" if self.rng.random() < 0.5 else "no_error"]
        if truth_terminal == "vision_error":
            if r < recall:
                return TERMINAL_ANSWERS["vision_error"]
            return TERMINAL_ANSWERS["other_error" if self.rng.random() < 0.5 else "no_error"]
        if r < recall:
            return TERMINAL_ANSWERS["other_error"]
        return TERMINAL_ANSWERS["no_error"]

    def annotate_nlu(self, text: str, truth: Optional[LogicalForm],
                     grammar: GeneratorGrammar) -> LogicalForm:
        """Ground-truth parse, corrupted with probability annotation_error_rate."""
        if truth is None:
            raise CannotAnnotate(f"not expressible: {text!r}")
        if self.rng.random() < self.profile.annotation_error_rate:
            other = self.rng.choice(grammar.templates)
            wrong_text, wrong_lf = grammar.instantiate(other, self.rng)
            return realign_spans(wrong_lf, tokenize(wrong_text), tokenize(text))
        return truth

    def annotate_vision(self, truth_mask: frozenset, grid) -> frozenset:
        """Ground-truth mask, corrupted with probability annotation_error_rate."""
        if self.rng.random() < self.profile.annotation_error_rate:
            occupied = sorted(grid.cells)
            if not occupied:
                return frozenset()
            keep = self.rng.randrange(1, max(2, len(occupied) // 2))
            return frozenset(self.rng.sample(occupied, min(keep, len(occupied))))
        return truth_mask

    def qualification(self) -> bool:
        """Adversarial workers fail the entry quiz at the configured rate."""
        if self.profile.mode == "adversarial":
            return self.rng.random() >= self.profile.qualification_fail_rate
        return True


@dataclass
class WorkerStatus:
    profile: WorkerProfile
    blacklisted: bool = False
    consecutive_red: int = 0
    qualified: Optional[bool] = None


class WorkerRegistry:
    """Profiles, qualification outcomes, and the blacklist."""

    def __init__(self, profiles: Sequence[WorkerProfile] = (),
                 blacklist_streak: int = DEFAULT_BLACKLIST_STREAK):
        self.status: dict[str, WorkerStatus] = {p.id: WorkerStatus(p) for p in profiles}
        self.blacklist_streak = blacklist_streak

    def add(self, profile: WorkerProfile) -> None:
        self.status[profile.id] = WorkerStatus(profile)

    def is_blacklisted(self, worker_id: str) -> bool:
        entry = self.status.get(worker_id)
        return bool(entry and entry.blacklisted)

    def record_session_band(self, worker_id: str, band: str) -> None:
        """Blacklist after a streak of red sessions."""
        entry = self.status[worker_id]
        if band == "red":
            entry.consecutive_red += 1
            if entry.consecutive_red >= self.blacklist_streak:
                entry.blacklisted = True
        else:
            entry.consecutive_red = 0

    def save(self, path) -> None:
        with open(path, "w") as f:
            for worker_id in sorted(self.status):
                entry = self.status[worker_id]
                row = {
                    "profile": asdict(entry.profile),
                    "blacklisted": entry.blacklisted,
                    "consecutive_red": entry.consecutive_red,
                    "qualified": entry.qualified,
                }
                f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "WorkerRegistry":
        registry = cls()
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                row = json.loads(line)
                entry = WorkerStatus(
                    WorkerProfile(**row["profile"]),
                    row["blacklisted"],
                    row["consecutive_red"],
                    row["qualified"],
                )
                registry.status[entry.profile.id] = entry
        return registry


def default_worker_pool(n: int = 10, mark_precision: float = 0.89,
                        mark_recall: float = 0.43, annotation_error_rate: float = 0.0,
                        seed: int = 0) -> list[WorkerProfile]:
    """Honest workers matching the reported marking precision/recall."""
    return [
        WorkerProfile(
            id=f"w{i:03d}",
            mark_precision=mark_precision,
            mark_recall=mark_recall,
            annotation_error_rate=annotation_error_rate,
            seed=seed + i,
        )
        for i in range(n)
    ]
