"""Logical forms: the tree-structured command representation with text-span leaves.

The dict rendering mirrors the assistant's wire format: spans are [x, [y, z]]
(message index, inclusive token range), where-clauses hold an "AND" list of
{pred_text, obj_text} conjuncts, and absent optional fields are omitted.
"""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence


class DialogueType(str, Enum):
    HUMAN_GIVE_COMMAND = "HUMAN_GIVE_COMMAND"
    GET_MEMORY = "GET_MEMORY"
    PUT_MEMORY = "PUT_MEMORY"


class ActionType(str, Enum):
    BUILD = "BUILD"
    DANCE = "DANCE"
    GET = "GET"
    SPAWN = "SPAWN"
    RESUME = "RESUME"
    FILL = "FILL"
    DESTROY = "DESTROY"
    MOVE = "MOVE"
    UNDO = "UNDO"
    STOP = "STOP"
    DIG = "DIG"
    FREEBUILD = "FREEBUILD"


class RelativeDirection(str, Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"
    FRONT = "FRONT"
    BACK = "BACK"
    UP = "UP"
    DOWN = "DOWN"
    AROUND = "AROUND"
    NEAR = "NEAR"
    EXACT = "EXACT"


PREDICATES = ("has_name", "has_colour", "has_tag")

# Action types that never carry location/reference/schematic children.
BARE_ACTIONS = (ActionType.STOP, ActionType.RESUME, ActionType.UNDO)


class InvalidForm(Exception):
    pass


class SpanOutOfRange(Exception):
    pass


class MalformedSequence(Exception):
    pass


@dataclass(frozen=True)
class Span:
    """Inclusive token range [start, end] of chat message `text_index`."""

    text_index: int
    start: int
    end: int

    def __post_init__(self):
        if self.text_index < 0 or not 0 <= self.start <= self.end:
            raise ValueError(f"bad span ({self.text_index}, ({self.start}, {self.end}))")

    def to_list(self) -> list:
        return [self.text_index, [self.start, self.end]]


@dataclass(frozen=True)
class WhereClause:
    conjuncts: tuple[tuple[str, Span], ...]


@dataclass(frozen=True)
class Filters:
    where_clause: WhereClause


@dataclass(frozen=True)
class ReferenceObject:
    filters: Filters


@dataclass(frozen=True)
class Schematic:
    filters: Filters


@dataclass(frozen=True)
class Location:
    relative_direction: RelativeDirection
    reference_object: Optional[ReferenceObject] = None


@dataclass(frozen=True)
class Action:
    action_type: ActionType
    location: Optional[Location] = None
    reference_object: Optional[ReferenceObject] = None
    schematic: Optional[Schematic] = None


@dataclass(frozen=True)
class LogicalForm:
    dialogue_type: DialogueType
    action_sequence: tuple[Action, ...] = ()
    filters: Optional[Filters] = None       # GET_MEMORY / PUT_MEMORY referent
    answer_type: Optional[str] = None       # GET_MEMORY: "NAME" or "COUNT"
    upsert: Optional[tuple[str, Span]] = None  # PUT_MEMORY tag triple


def where(*conjuncts: tuple[str, Span]) -> Filters:
    return Filters(WhereClause(tuple(conjuncts)))


_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens with punctuation stripped from the edges."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def resolve_span(span: Span, chat_history: Sequence[str]) -> str:
    """Space-joined tokens start..end of the referenced chat message."""
    if span.text_index >= len(chat_history):
        raise SpanOutOfRange(f"message {span.text_index} of {len(chat_history)}")
    tokens = tokenize(chat_history[span.text_index])
    if span.end >= len(tokens):
        raise SpanOutOfRange(f"token {span.end} of {len(tokens)}")
    return " ".join(tokens[span.start : span.end + 1])


def iter_spans(lf: LogicalForm) -> Iterable[Span]:
    """All span leaves of the form, in depth-first order."""

    def from_filters(f: Optional[Filters]):
        if f is None:
            return
        for _, span in f.where_clause.conjuncts:
            yield span

    for action in lf.action_sequence:
        if action.location and action.location.reference_object:
            yield from from_filters(action.location.reference_object.filters)
        if action.reference_object:
            yield from from_filters(action.reference_object.filters)
        if action.schematic:
            yield from from_filters(action.schematic.filters)
    yield from from_filters(lf.filters)
    if lf.upsert:
        yield lf.upsert[1]


def map_spans(lf: LogicalForm, fn) -> LogicalForm:
    """Rebuild the form with every span leaf replaced by fn(span)."""

    def on_filters(f: Optional[Filters]) -> Optional[Filters]:
        if f is None:
            return None
        return Filters(WhereClause(tuple((p, fn(s)) for p, s in f.where_clause.conjuncts)))

    actions = []
    for a in lf.action_sequence:
        loc = a.location
        if loc and loc.reference_object:
            loc = Location(loc.relative_direction, ReferenceObject(on_filters(loc.reference_object.filters)))
        ref = ReferenceObject(on_filters(a.reference_object.filters)) if a.reference_object else None
        sch = Schematic(on_filters(a.schematic.filters)) if a.schematic else None
        actions.append(Action(a.action_type, loc, ref, sch))
    upsert = (lf.upsert[0], fn(lf.upsert[1])) if lf.upsert else None
    return LogicalForm(
        lf.dialogue_type,
        tuple(actions),
        on_filters(lf.filters),
        lf.answer_type,
        upsert,
    )


# ---------------------------------------------------------------------------
# dict / canonical text form


def _filters_dict(f: Filters) -> dict:
    return {
        "where_clause": {
            "AND": [
                {"pred_text": p, "obj_text": s.to_list()}
                for p, s in f.where_clause.conjuncts
            ]
        }
    }


def to_dict(lf: LogicalForm) -> dict:
    doc: dict = {"dialogue_type": lf.dialogue_type.value}
    if lf.dialogue_type is DialogueType.HUMAN_GIVE_COMMAND:
        seq = []
        for a in lf.action_sequence:
            entry: dict = {"action_type": a.action_type.value}
            if a.location:
                loc: dict = {"relative_direction": a.location.relative_direction.value}
                if a.location.reference_object:
                    loc["reference_object"] = {
                        "filters": _filters_dict(a.location.reference_object.filters)
                    }
                entry["location"] = loc
            if a.reference_object:
                entry["reference_object"] = {"filters": _filters_dict(a.reference_object.filters)}
            if a.schematic:
                entry["schematic"] = {"filters": _filters_dict(a.schematic.filters)}
            seq.append(entry)
        doc["action_sequence"] = seq
    else:
        if lf.filters is not None:
            doc["filters"] = _filters_dict(lf.filters)
        if lf.answer_type is not None:
            doc["answer_type"] = lf.answer_type
        if lf.upsert is not None:
            doc["upsert"] = {"pred_text": lf.upsert[0], "obj_text": lf.upsert[1].to_list()}
    return doc


def _span_from_list(row) -> Span:
    try:
        idx, (start, end) = row
        return Span(int(idx), int(start), int(end))
    except (TypeError, ValueError) as e:
        raise InvalidForm(f"bad span payload {row!r}") from e


def _filters_from_dict(doc) -> Filters:
    try:
        conjuncts = tuple(
            (c["pred_text"], _span_from_list(c["obj_text"]))
            for c in doc["where_clause"]["AND"]
        )
    except (KeyError, TypeError) as e:
        raise InvalidForm(f"bad filters payload: {doc!r}") from e
    return Filters(WhereClause(conjuncts))


def from_dict(doc: dict) -> LogicalForm:
    try:
        dtype = DialogueType(doc["dialogue_type"])
    except (KeyError, ValueError) as e:
        raise InvalidForm(f"bad dialogue_type: {doc!r}") from e
    if dtype is DialogueType.HUMAN_GIVE_COMMAND:
        actions = []
        for entry in doc.get("action_sequence", []):
            try:
                atype = ActionType(entry["action_type"])
            except (KeyError, ValueError) as e:
                raise InvalidForm(f"bad action_type in {entry!r}") from e
            loc = None
            if "location" in entry:
                ldoc = entry["location"]
                try:
                    direction = RelativeDirection(ldoc["relative_direction"])
                except (KeyError, ValueError) as e:
                    raise InvalidForm(f"bad location in {entry!r}") from e
                ref = None
                if "reference_object" in ldoc:
                    ref = ReferenceObject(_filters_from_dict(ldoc["reference_object"]["filters"]))
                loc = Location(direction, ref)
            ref = None
            if "reference_object" in entry:
                ref = ReferenceObject(_filters_from_dict(entry["reference_object"]["filters"]))
            sch = None
            if "schematic" in entry:
                sch = Schematic(_filters_from_dict(entry["schematic"]["filters"]))
            actions.append(Action(atype, loc, ref, sch))
        return LogicalForm(dtype, tuple(actions))
    filters = _filters_from_dict(doc["filters"]) if "filters" in doc else None
    upsert = None
    if "upsert" in doc:
        u = doc["upsert"]
        upsert = (u["pred_text"], _span_from_list(u["obj_text"]))
    return LogicalForm(dtype, (), filters, doc.get("answer_type"), upsert)


def canonicalize(lf: LogicalForm) -> str:
    """Deterministic text rendering; equal forms give equal strings."""
    violations = validate(lf)
    if violations:
        raise InvalidForm("; ".join(violations))
    return json.dumps(to_dict(lf), sort_keys=True, separators=(",", ":"))


def from_canonical(text: str) -> LogicalForm:
    return from_dict(json.loads(text))


def validate(lf: LogicalForm) -> list[str]:
    """All invariant violations of the form, empty when valid."""
    problems: list[str] = []
    if lf.dialogue_type is DialogueType.HUMAN_GIVE_COMMAND:
        if lf.filters or lf.answer_type or lf.upsert:
            problems.append("HUMAN_GIVE_COMMAND carries a memory payload")
    else:
        if lf.action_sequence:
            problems.append(f"{lf.dialogue_type.value} carries an action_sequence")
        if lf.dialogue_type is DialogueType.GET_MEMORY:
            if lf.answer_type not in ("NAME", "COUNT"):
                problems.append(f"bad answer_type {lf.answer_type!r}")
            if lf.upsert:
                problems.append("GET_MEMORY carries an upsert")
        if lf.dialogue_type is DialogueType.PUT_MEMORY:
            if lf.upsert is None:
                problems.append("PUT_MEMORY without upsert")
            elif lf.upsert[0] not in PREDICATES:
                problems.append(f"unknown upsert predicate {lf.upsert[0]!r}")
            if lf.answer_type:
                problems.append("PUT_MEMORY carries an answer_type")
    for a in lf.action_sequence:
        if a.action_type in BARE_ACTIONS and (a.location or a.reference_object or a.schematic):
            problems.append(f"{a.action_type.value} carries children")
        if a.location and a.location.relative_direction is RelativeDirection.AROUND:
            if a.location.reference_object is None:
                problems.append("AROUND without reference_object")
    for f in _all_filters(lf):
        if not f.where_clause.conjuncts:
            problems.append("empty where_clause")
        for pred, _ in f.where_clause.conjuncts:
            if pred not in PREDICATES:
                problems.append(f"unknown predicate {pred!r}")
    return problems


def _all_filters(lf: LogicalForm) -> Iterable[Filters]:
    for a in lf.action_sequence:
        if a.location and a.location.reference_object:
            yield a.location.reference_object.filters
        if a.reference_object:
            yield a.reference_object.filters
        if a.schematic:
            yield a.schematic.filters
    if lf.filters:
        yield lf.filters


# ---------------------------------------------------------------------------
# depth-first linearization

KNOWN_KEYS = frozenset(
    {
        "dialogue_type",
        "action_sequence",
        "action_type",
        "location",
        "relative_direction",
        "reference_object",
        "schematic",
        "filters",
        "where_clause",
        "AND",
        "pred_text",
        "obj_text",
        "answer_type",
        "upsert",
    }
)

_OPEN_KEY = "({}"
_OPEN_LIST = "(list"
_OPEN_ITEM = "(item"
_CLOSE = ")"
_INT_RE = re.compile(r"^-?\d+$")


def _emit(value, out: list[str]) -> None:
    if isinstance(value, dict):
        for key in sorted(value):
            if key not in KNOWN_KEYS:
                raise MalformedSequence(f"unknown key {key!r}")
            out.append(_OPEN_KEY.format(key))
            _emit(value[key], out)
            out.append(_CLOSE)
    elif isinstance(value, list):
        out.append(_OPEN_LIST)
        for item in value:
            out.append(_OPEN_ITEM)
            _emit(item, out)
            out.append(_CLOSE)
        out.append(_CLOSE)
    elif isinstance(value, bool):
        raise MalformedSequence("boolean leaves unsupported")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, str):
        out.append(value)
    else:
        raise MalformedSequence(f"unsupported leaf {value!r}")


def linearize(lf: LogicalForm) -> list[str]:
    """Depth-first pre-order token sequence of the form."""
    out: list[str] = []
    _emit(to_dict(lf), out)
    return out


class _TokenCursor:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.i = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise MalformedSequence("unexpected end of sequence")
        self.i += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.take()
        if got != tok:
            raise MalformedSequence(f"expected {tok!r}, got {got!r}")


def _parse_value(cur: _TokenCursor):
    tok = cur.peek()
    if tok is None:
        raise MalformedSequence("unexpected end of sequence")
    if tok == _OPEN_LIST:
        cur.take()
        items = []
        while cur.peek() == _OPEN_ITEM:
            cur.take()
            items.append(_parse_value(cur))
            cur.expect(_CLOSE)
        cur.expect(_CLOSE)
        return items
    if tok.startswith("("):
        obj: dict = {}
        while (nxt := cur.peek()) is not None and nxt.startswith("(") and nxt not in (_OPEN_LIST, _OPEN_ITEM):
            key = cur.take()[1:]
            if key not in KNOWN_KEYS:
                raise MalformedSequence(f"unknown key {key!r}")
            obj[key] = _parse_value(cur)
            cur.expect(_CLOSE)
        return obj
    tok = cur.take()
    if tok == _CLOSE:
        raise MalformedSequence("unbalanced close marker")
    return int(tok) if _INT_RE.match(tok) else tok


def delinearize(tokens: Sequence[str]) -> LogicalForm:
    """Invert linearize; raises MalformedSequence on bad input."""
    cur = _TokenCursor(tokens)
    doc = _parse_value(cur)
    if cur.i != len(cur.tokens):
        raise MalformedSequence(f"trailing tokens at {cur.i}")
    if not isinstance(doc, dict) or "dialogue_type" not in doc:
        raise MalformedSequence("sequence does not encode a logical form")
    return from_dict(doc)
