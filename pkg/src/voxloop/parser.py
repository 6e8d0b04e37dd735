"""Trainable command parser: nearest-exemplar retrieval with span re-alignment.

The model is an ordered exemplar store. Parsing retrieves the training pair
closest under normalized word edit distance and re-targets its span leaves
onto the new text. Training appends, re-biasing re-weights the seed tranche.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from . import lf as lfm
from .lf import LogicalForm, Span, canonicalize, map_spans, resolve_span, tokenize
from .scoring import word_edit_distance

DEFAULT_REBIAS_FACTOR = 2.0


class EmptyModel(Exception):
    pass


class InvalidPair(Exception):
    pass


@dataclass(frozen=True)
class Exemplar:
    tokens: tuple[str, ...]
    lf: LogicalForm
    tranche_id: int
    weight: float = 1.0


@dataclass(frozen=True)
class ParserModel:
    exemplars: tuple[Exemplar, ...] = ()
    k: int = 1
    rebias_factor: float = DEFAULT_REBIAS_FACTOR


def normalized_distance(a: Sequence[str], b: Sequence[str]) -> float:
    """Word edit distance scaled by the longer length; two empties are distance 0."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return word_edit_distance(a, b) / longest


def _window_match(needle: Sequence[str], haystack: Sequence[str]) -> Optional[tuple[int, int]]:
    n = len(needle)
    for i in range(len(haystack) - n + 1):
        if tuple(haystack[i : i + n]) == tuple(needle):
            return (i, i + n - 1)
    return None


def _fallback_window(needle: Sequence[str], haystack: Sequence[str], src_span: Span) -> tuple[int, int]:
    """Window of minimal edit distance to the needle; ties prefer the source position."""
    best = None
    for i in range(len(haystack)):
        for j in range(i, len(haystack)):
            dist = word_edit_distance(needle, haystack[i : j + 1])
            shift = abs(i - src_span.start) + abs(j - src_span.end)
            key = (dist, shift, i, j)
            if best is None or key < best[0]:
                best = (key, (i, j))
    assert best is not None
    return best[1]


def realign_spans(form: LogicalForm, src_tokens: Sequence[str], dst_tokens: Sequence[str],
                  dst_text_index: int = 0) -> LogicalForm:
    """Re-target every span onto dst_tokens: exact window match, else closest window."""
    if not dst_tokens:
        raise ValueError("cannot realign spans onto an empty token list")

    def move(span: Span) -> Span:
        needle = src_tokens[span.start : span.end + 1]
        hit = _window_match(needle, dst_tokens)
        if hit is None:
            hit = _fallback_window(needle, dst_tokens, span)
        return Span(dst_text_index, hit[0], hit[1])

    return map_spans(form, move)


def parse(model: ParserModel, text: str, chat_index: int = 0) -> LogicalForm:
    """Nearest-exemplar retrieval; spans come back aligned to the new text."""
    if not model.exemplars:
        raise EmptyModel("parser has no exemplars")
    tokens = tuple(tokenize(text))

    ranked = sorted(
        range(len(model.exemplars)),
        key=lambda i: (
            normalized_distance(tokens, model.exemplars[i].tokens),
            -model.exemplars[i].weight,
            i,
        ),
    )
    if model.k <= 1:
        ex = model.exemplars[ranked[0]]
        return realign_spans(ex.lf, ex.tokens, tokens, chat_index)

    # k > 1: majority vote over the realigned candidates; ties fall back to
    # the best-ranked candidate among the winners.
    candidates = []
    for idx in ranked[: model.k]:
        ex = model.exemplars[idx]
        candidate = realign_spans(ex.lf, ex.tokens, tokens, chat_index)
        candidates.append((canonicalize(candidate), candidate))
    counts: dict[str, int] = {}
    for key, _ in candidates:
        counts[key] = counts.get(key, 0) + 1
    top = max(counts.values())
    for key, candidate in candidates:
        if counts[key] == top:
            return candidate
    raise AssertionError("unreachable")


def _check_pair(tokens: Sequence[str], form: LogicalForm) -> None:
    problems = lfm.validate(form)
    if problems:
        raise InvalidPair("; ".join(problems))
    text = " ".join(tokens)
    for span in lfm.iter_spans(form):
        try:
            resolve_span(span, [text])
        except lfm.SpanOutOfRange as e:
            raise InvalidPair(f"span {span} does not resolve in {text!r}") from e


def train(model: ParserModel, pairs: Iterable[tuple[str, LogicalForm]], tranche_id: int) -> ParserModel:
    """Append validated pairs as unit-weight exemplars; exact duplicates are skipped."""
    seen = {(ex.tokens, canonicalize(ex.lf)) for ex in model.exemplars}
    new = list(model.exemplars)
    for text, form in pairs:
        tokens = tuple(tokenize(text))
        _check_pair(tokens, form)
        key = (tokens, canonicalize(form))
        if key in seen:
            continue
        seen.add(key)
        new.append(Exemplar(tokens, form, tranche_id))
    return replace(model, exemplars=tuple(new))


def rebias(model: ParserModel, factor: Optional[float] = None) -> ParserModel:
    """Scale seed-tranche weights so distance ties resolve toward tranche 0."""
    f = model.rebias_factor if factor is None else factor
    if f < 1.0:
        raise ValueError("rebias factor must be >= 1")
    bumped = tuple(
        replace(ex, weight=ex.weight * f) if ex.tranche_id == 0 else ex
        for ex in model.exemplars
    )
    return replace(model, exemplars=bumped)


def save_parser_model(model: ParserModel, path) -> None:
    """Line-delimited dump: one params header then one exemplar per line."""
    import json

    with open(path, "w") as f:
        header = {"k": model.k, "rebias_factor": model.rebias_factor}
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for ex in model.exemplars:
            row = {
                "text": " ".join(ex.tokens),
                "lf": canonicalize(ex.lf),
                "tranche_id": ex.tranche_id,
                "weight": ex.weight,
            }
            f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def load_parser_model(path) -> ParserModel:
    import json

    from .lf import from_canonical

    with open(path) as f:
        lines = [line for line in f if line.strip()]
    header = json.loads(lines[0])
    exemplars = []
    for line in lines[1:]:
        row = json.loads(line)
        exemplars.append(Exemplar(
            tuple(tokenize(row["text"])),
            from_canonical(row["lf"]),
            row["tranche_id"],
            row["weight"],
        ))
    return ParserModel(tuple(exemplars), header["k"], header["rebias_factor"])


def evaluate(model: ParserModel, dataset: Sequence[tuple[str, LogicalForm]]) -> float:
    """Exact-match accuracy of parse against ground truth; empty set counts 1.0."""
    if not dataset:
        return 1.0
    hits = sum(
        1 for text, truth in dataset
        if canonicalize(parse(model, text)) == canonicalize(truth)
    )
    return hits / len(dataset)
