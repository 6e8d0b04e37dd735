"""Seed command grammar: templated (text, logical form) pairs with an unlock schedule.

The grammar doubles as the ground-truth oracle for simulated sessions. New
templates unlock as iterations progress, so the command distribution drifts
away from the iteration-0 seed data.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Callable, Optional

from .lf import (
    Action,
    ActionType,
    DialogueType,
    Filters,
    Location,
    LogicalForm,
    ReferenceObject,
    RelativeDirection,
    Schematic,
    Span,
    WhereClause,
    tokenize,
)

SCHEMATICS = ("box", "cube", "sphere", "pyramid", "tower", "wall", "house", "dome", "arch", "square")
NAMES = ("cube", "sphere", "house", "tower", "fort", "wall", "pyramid", "dome", "arch")
PLURAL_NAMES = ("cubes", "spheres", "houses", "towers", "forts", "walls", "pyramids", "domes", "arches")
COLORS = ("red", "blue", "green", "yellow", "white", "black")
HOLES = ("hole", "moat", "pit", "trench")
TAGS = ("house", "castle", "bridge", "garden", "ship", "farm")

LEXICONS: dict[str, tuple[str, ...]] = {
    "schematic": SCHEMATICS,
    "name": NAMES,
    "pname": PLURAL_NAMES,
    "color": COLORS,
    "hole": HOLES,
    "tag": TAGS,
}

_SLOT_RE = re.compile(r"^\{(\w+)\}$")

Slots = dict[str, int]  # slot name -> token index in the generated text


def _span(idx: int) -> Span:
    return Span(0, idx, idx)


def _name_filters(idx: int) -> Filters:
    return Filters(WhereClause((("has_name", _span(idx)),)))


def _ref(idx: int) -> ReferenceObject:
    return ReferenceObject(_name_filters(idx))


def _schem(name_idx: int, color_idx: Optional[int] = None) -> Schematic:
    conjuncts: list[tuple[str, Span]] = []
    if color_idx is not None:
        conjuncts.append(("has_colour", _span(color_idx)))
    conjuncts.append(("has_name", _span(name_idx)))
    return Schematic(Filters(WhereClause(tuple(conjuncts))))


def _ref_colored(name_idx: int, color_idx: int) -> ReferenceObject:
    return ReferenceObject(
        Filters(WhereClause((("has_colour", _span(color_idx)), ("has_name", _span(name_idx)))))
    )


def _command(*actions: Action) -> LogicalForm:
    return LogicalForm(DialogueType.HUMAN_GIVE_COMMAND, tuple(actions))


def _loc(direction: RelativeDirection, ref: Optional[ReferenceObject] = None) -> Location:
    return Location(direction, ref)


@dataclass(frozen=True)
class Template:
    pattern: str
    unlock: int
    build: Callable[[Slots], LogicalForm]

    @property
    def tokens(self) -> list[str]:
        return self.pattern.split()

    def slot_positions(self) -> dict[str, int]:
        out = {}
        for i, tok in enumerate(self.tokens):
            m = _SLOT_RE.match(tok)
            if m:
                out[m.group(1)] = i
        return out


def _bare(action: ActionType) -> Callable[[Slots], LogicalForm]:
    return lambda s: _command(Action(action))


TEMPLATES: tuple[Template, ...] = (
    # --- iteration 0: the seed distribution -------------------------------
    Template("build a {schematic}", 0, lambda s: _command(
        Action(ActionType.BUILD, schematic=_schem(s["schematic"])))),
    Template("build me a {color} {schematic}", 0, lambda s: _command(
        Action(ActionType.BUILD, schematic=_schem(s["schematic"], s["color"])))),
    Template("move to the left of the {name}", 0, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.LEFT, _ref(s["name"]))))),
    Template("go right of the {name}", 0, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.RIGHT, _ref(s["name"]))))),
    Template("dig a moat around the {name}", 0, lambda s: _command(
        Action(ActionType.DIG,
               location=_loc(RelativeDirection.AROUND, _ref(s["name"])),
               schematic=_schem(2)))),
    Template("destroy the {name}", 0, lambda s: _command(
        Action(ActionType.DESTROY, reference_object=_ref(s["name"])))),
    Template("go to the {name}", 0, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.NEAR, _ref(s["name"]))))),
    Template("pick up the {name}", 0, lambda s: _command(
        Action(ActionType.GET, reference_object=_ref(s["name"])))),
    Template("fill up the {hole}", 0, lambda s: _command(
        Action(ActionType.FILL, reference_object=_ref(s["hole"])))),
    Template("dig a {hole}", 0, lambda s: _command(
        Action(ActionType.DIG, schematic=_schem(s["hole"])))),
    Template("spawn a {schematic} here", 0, lambda s: _command(
        Action(ActionType.SPAWN, schematic=_schem(s["schematic"])))),
    Template("undo", 0, _bare(ActionType.UNDO)),
    Template("stop", 0, _bare(ActionType.STOP)),
    Template("resume", 0, _bare(ActionType.RESUME)),
    Template("dance", 0, _bare(ActionType.DANCE)),
    Template("what is that", 0, lambda s: LogicalForm(
        DialogueType.GET_MEMORY, answer_type="NAME")),
    Template("how many {pname} are there", 0, lambda s: LogicalForm(
        DialogueType.GET_MEMORY, filters=_name_filters(s["pname"]), answer_type="COUNT")),
    Template("that is a {tag}", 0, lambda s: LogicalForm(
        DialogueType.PUT_MEMORY, upsert=("has_name", _span(s["tag"])))),
    # --- later unlocks: paraphrases and new constructions -----------------
    Template("construct a {schematic}", 1, lambda s: _command(
        Action(ActionType.BUILD, schematic=_schem(s["schematic"])))),
    Template("get rid of the {name}", 1, lambda s: _command(
        Action(ActionType.DESTROY, reference_object=_ref(s["name"])))),
    Template("walk to the {name}", 2, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.NEAR, _ref(s["name"]))))),
    Template("knock down the {name}", 2, lambda s: _command(
        Action(ActionType.DESTROY, reference_object=_ref(s["name"])))),
    Template("put a {schematic} near the {name}", 3, lambda s: _command(
        Action(ActionType.BUILD,
               location=_loc(RelativeDirection.NEAR, _ref(s["name"])),
               schematic=_schem(s["schematic"])))),
    Template("stand behind the {name}", 3, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.BACK, _ref(s["name"]))))),
    Template("tear down the {name}", 4, lambda s: _command(
        Action(ActionType.DESTROY, reference_object=_ref(s["name"])))),
    Template("dance around the {name}", 4, lambda s: _command(
        Action(ActionType.DANCE, location=_loc(RelativeDirection.AROUND, _ref(s["name"]))))),
    Template("make me a {schematic}", 5, lambda s: _command(
        Action(ActionType.BUILD, schematic=_schem(s["schematic"])))),
    Template("fill in the {hole}", 5, lambda s: _command(
        Action(ActionType.FILL, reference_object=_ref(s["hole"])))),
    Template("demolish the {color} {name}", 6, lambda s: _command(
        Action(ActionType.DESTROY, reference_object=_ref_colored(s["name"], s["color"])))),
    Template("come here", 6, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.NEAR)))),
    Template("place a {schematic} to the left of the {name}", 7, lambda s: _command(
        Action(ActionType.BUILD,
               location=_loc(RelativeDirection.LEFT, _ref(s["name"])),
               schematic=_schem(s["schematic"])))),
    Template("how many {color} things are there", 7, lambda s: LogicalForm(
        DialogueType.GET_MEMORY,
        filters=Filters(WhereClause((("has_colour", _span(s["color"])),))),
        answer_type="COUNT")),
    Template("tag that as {tag}", 8, lambda s: LogicalForm(
        DialogueType.PUT_MEMORY, upsert=("has_tag", _span(s["tag"])))),
    Template("dig a {hole} next to the {name}", 8, lambda s: _command(
        Action(ActionType.DIG,
               location=_loc(RelativeDirection.NEAR, _ref(s["name"])),
               schematic=_schem(s["hole"])))),
    Template("spawn a {color} {schematic} over there", 9, lambda s: _command(
        Action(ActionType.SPAWN, schematic=_schem(s["schematic"], s["color"])))),
    Template("walk over to the {name}", 9, lambda s: _command(
        Action(ActionType.MOVE, location=_loc(RelativeDirection.NEAR, _ref(s["name"]))))),
    Template("build a {schematic} on top of the {name}", 10, lambda s: _command(
        Action(ActionType.BUILD,
               location=_loc(RelativeDirection.UP, _ref(s["name"])),
               schematic=_schem(s["schematic"])))),
    Template("what is this thing called", 10, lambda s: LogicalForm(
        DialogueType.GET_MEMORY, answer_type="NAME")),
)


class GeneratorGrammar:
    """Uniform sampler over the templates unlocked at a given iteration."""

    def __init__(self, templates: tuple[Template, ...] = TEMPLATES):
        self.templates = templates
        self._matchers = [self._compile(t) for t in templates]

    @staticmethod
    def _compile(template: Template):
        parts = []
        slots = []
        for tok in template.tokens:
            m = _SLOT_RE.match(tok)
            if m:
                slots.append(m.group(1))
                parts.append(f"({'|'.join(re.escape(v) for v in LEXICONS[m.group(1)])})")
            else:
                parts.append(re.escape(tok))
        return re.compile("^" + r"\ ".join(parts) + "$"), slots

    def unlocked(self, iteration: int) -> list[Template]:
        return [t for t in self.templates if t.unlock <= iteration]

    def instantiate(self, template: Template, rng: random.Random) -> tuple[str, LogicalForm]:
        tokens = []
        slot_indices: Slots = {}
        for i, tok in enumerate(template.tokens):
            m = _SLOT_RE.match(tok)
            if m:
                slot = m.group(1)
                tokens.append(rng.choice(LEXICONS[slot]))
                slot_indices[slot] = i
            else:
                tokens.append(tok)
        return " ".join(tokens), template.build(slot_indices)

    def generate(self, n: int, iteration: int, seed: int) -> list[tuple[str, LogicalForm]]:
        """n (text, form) pairs drawn uniformly from the unlocked templates."""
        rng = random.Random(seed)
        pool = self.unlocked(iteration)
        return [self.instantiate(rng.choice(pool), rng) for _ in range(n)]

    def oracle_parse(self, text: str) -> Optional[LogicalForm]:
        """Ground-truth form for a text the grammar could have produced, else None."""
        normalized = " ".join(tokenize(text))
        for template, (pattern, slots) in zip(self.templates, self._matchers):
            if pattern.match(normalized):
                positions = template.slot_positions()
                return template.build(positions)
        return None


def generate(grammar: GeneratorGrammar, n: int, iteration: int, seed: int):
    return grammar.generate(n, iteration, seed)
