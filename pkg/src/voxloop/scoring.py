"""Session quality scoring: edit-distance metrics, the 0-10 stoplight, bonuses, gating."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .lf import tokenize

DEFAULT_WEIGHTS = (0.5, 0.25, 0.25)  # command count, diversity, creativity
DEFAULT_TARGETS = (8.0, 4.0, 4.0)
GREEN_THRESHOLD = 7.0
YELLOW_THRESHOLD = 4.0

DEFAULT_MIN_SECONDS = 300.0  # five-minute interaction minimum
DEFAULT_MIN_COMMANDS = 5


@dataclass(frozen=True)
class SessionScore:
    n_commands: int
    diversity: float
    creativity: float
    score: float
    band: str


@dataclass(frozen=True)
class GateResult:
    allowed: bool
    # Reasons are for the admin channel only; the worker-facing surface
    # must never see them.
    reasons: tuple[str, ...]


def word_edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Token-level Levenshtein distance (unit insert/delete/substitute)."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tb in enumerate(b, start=1):
            cost = 0 if ta == tb else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def diversity(session_commands: Sequence[str]) -> float:
    """Mean pairwise word edit distance within a session; < 2 commands -> 0."""
    toks = [tokenize(c) for c in session_commands]
    if len(toks) < 2:
        return 0.0
    total = 0
    pairs = 0
    for i in range(len(toks)):
        for j in range(i + 1, len(toks)):
            total += word_edit_distance(toks[i], toks[j])
            pairs += 1
    return total / pairs


def creativity(command: str, global_history: Sequence[str]) -> float:
    """Mean word edit distance of a command against all prior commands."""
    if not global_history:
        return 0.0
    toks = tokenize(command)
    return sum(word_edit_distance(toks, tokenize(h)) for h in global_history) / len(global_history)


def stoplight(
    n_commands: int,
    diversity_value: float,
    creativity_value: float,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    targets: tuple[float, float, float] = DEFAULT_TARGETS,
) -> SessionScore:
    """Score out of 10 from a weighted average of saturating log-normalized metrics."""
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    values = (float(n_commands), diversity_value, creativity_value)
    total = 0.0
    for w, x, t in zip(weights, values, targets):
        total += w * min(1.0, math.log1p(max(x, 0.0)) / math.log1p(t))
    score = max(0.0, min(10.0, 10.0 * total))
    if score >= GREEN_THRESHOLD:
        band = "green"
    elif score >= YELLOW_THRESHOLD:
        band = "yellow"
    else:
        band = "red"
    return SessionScore(n_commands, diversity_value, creativity_value, score, band)


def bonus(score: float, base_pay: float, per_point: float) -> float:
    """Live expected payment: base plus a linear per-point bonus."""
    if not 0.0 <= score <= 10.0:
        raise ValueError(f"score {score} outside [0, 10]")
    return base_pay + per_point * score


def submission_gate(
    elapsed_seconds: float,
    n_commands: int,
    min_seconds: float = DEFAULT_MIN_SECONDS,
    min_commands: int = DEFAULT_MIN_COMMANDS,
) -> GateResult:
    """Decide whether the session may be submitted; criteria stay unadvertised."""
    reasons = []
    if elapsed_seconds < min_seconds:
        reasons.append(f"elapsed {elapsed_seconds:.0f}s < {min_seconds:.0f}s")
    if n_commands < min_commands:
        reasons.append(f"{n_commands} commands < {min_commands}")
    return GateResult(not reasons, tuple(reasons))
