"""Logical form data model, canonical text, spans, and linearization."""
import pytest

from voxloop.grammar import GeneratorGrammar
from voxloop.lf import (
    Action,
    ActionType,
    DialogueType,
    Filters,
    InvalidForm,
    Location,
    LogicalForm,
    MalformedSequence,
    ReferenceObject,
    RelativeDirection,
    Schematic,
    Span,
    SpanOutOfRange,
    WhereClause,
    canonicalize,
    delinearize,
    from_canonical,
    linearize,
    resolve_span,
    to_dict,
    tokenize,
    validate,
    where,
)


def build_a_box():
    return LogicalForm(
        DialogueType.HUMAN_GIVE_COMMAND,
        (Action(ActionType.BUILD, schematic=Schematic(where(("has_name", Span(0, 2, 2))))),),
    )


def move_left_of_cube():
    return LogicalForm(
        DialogueType.HUMAN_GIVE_COMMAND,
        (
            Action(
                ActionType.MOVE,
                location=Location(
                    RelativeDirection.LEFT,
                    ReferenceObject(where(("has_name", Span(0, 6, 6)))),
                ),
            ),
        ),
    )


def dig_moat_around_fort():
    return LogicalForm(
        DialogueType.HUMAN_GIVE_COMMAND,
        (
            Action(
                ActionType.DIG,
                location=Location(
                    RelativeDirection.AROUND,
                    ReferenceObject(where(("has_name", Span(0, 5, 5)))),
                ),
                schematic=Schematic(where(("has_name", Span(0, 2, 2)))),
            ),
        ),
    )


FIXTURE_FORMS = [build_a_box, move_left_of_cube, dig_moat_around_fort]


def test_tokenize_strips_punctuation_and_lowercases():
    assert tokenize("Build a box!") == ["build", "a", "box"]


def test_tokenize_moat_command():
    toks = tokenize("dig a moat around the fort")
    assert len(toks) == 6
    assert toks[5] == "fort"


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_idempotent_on_rejoined_output():
    for text in ["Build a BIG, red box!", "what is that?", "go   to the   fort"]:
        toks = tokenize(text)
        assert tokenize(" ".join(toks)) == toks


def test_resolve_span_box():
    assert resolve_span(Span(0, 2, 2), ["build a box"]) == "box"


def test_resolve_span_cube():
    assert resolve_span(Span(0, 6, 6), ["move to the left of the cube"]) == "cube"


def test_resolve_span_moat():
    assert resolve_span(Span(0, 2, 2), ["dig a moat around the fort"]) == "moat"


def test_resolve_span_out_of_range():
    with pytest.raises(SpanOutOfRange):
        resolve_span(Span(0, 2, 5), ["build a box"])
    with pytest.raises(SpanOutOfRange):
        resolve_span(Span(1, 0, 0), ["build a box"])


def test_span_rejects_inverted_range():
    with pytest.raises(ValueError):
        Span(0, 3, 1)


def test_canonicalize_is_field_order_independent():
    a = Action(
        ActionType.DIG,
        schematic=Schematic(where(("has_name", Span(0, 2, 2)))),
        location=Location(RelativeDirection.AROUND, ReferenceObject(where(("has_name", Span(0, 5, 5))))),
    )
    b = Action(
        ActionType.DIG,
        location=Location(RelativeDirection.AROUND, ReferenceObject(where(("has_name", Span(0, 5, 5))))),
        schematic=Schematic(where(("has_name", Span(0, 2, 2)))),
    )
    lf_a = LogicalForm(DialogueType.HUMAN_GIVE_COMMAND, (a,))
    lf_b = LogicalForm(DialogueType.HUMAN_GIVE_COMMAND, (b,))
    assert canonicalize(lf_a) == canonicalize(lf_b)


def test_canonicalize_distinguishes_spans():
    a = build_a_box()
    b = LogicalForm(
        DialogueType.HUMAN_GIVE_COMMAND,
        (Action(ActionType.BUILD, schematic=Schematic(where(("has_name", Span(0, 1, 1))))),),
    )
    assert canonicalize(a) != canonicalize(b)


def test_canonicalize_build_a_box_contains_action_type_once():
    text = canonicalize(build_a_box())
    assert text.count('"action_type":"BUILD"') == 1
    assert '"obj_text":[0,[2,2]]' in text


def test_canonical_round_trip():
    for make in FIXTURE_FORMS:
        form = make()
        assert from_canonical(canonicalize(form)) == form


def test_validate_accepts_fixture_forms():
    for make in FIXTURE_FORMS:
        assert validate(make()) == []


def test_validate_rejects_around_without_reference():
    form = LogicalForm(
        DialogueType.HUMAN_GIVE_COMMAND,
        (Action(ActionType.DIG, location=Location(RelativeDirection.AROUND)),),
    )
    assert any("AROUND" in v for v in validate(form))


def test_validate_rejects_get_memory_with_actions():
    form = LogicalForm(DialogueType.GET_MEMORY, (Action(ActionType.BUILD),), answer_type="NAME")
    assert any("action_sequence" in v for v in validate(form))


def test_validate_rejects_bare_action_children():
    form = LogicalForm(
        DialogueType.HUMAN_GIVE_COMMAND,
        (Action(ActionType.UNDO, location=Location(RelativeDirection.UP)),),
    )
    assert any("carries children" in v for v in validate(form))


def test_canonicalize_raises_on_invalid_form():
    form = LogicalForm(DialogueType.GET_MEMORY, answer_type="MAYBE")
    with pytest.raises(InvalidForm):
        canonicalize(form)


def test_linearize_round_trips_fixture_forms():
    for make in FIXTURE_FORMS:
        form = make()
        assert delinearize(linearize(form)) == form


def test_linearize_round_trips_empty_action_sequence():
    form = LogicalForm(DialogueType.HUMAN_GIVE_COMMAND, ())
    assert delinearize(linearize(form)) == form


def test_linearize_round_trips_generated_forms():
    grammar = GeneratorGrammar()
    pairs = grammar.generate(1000, iteration=10, seed=99)
    for _, form in pairs:
        assert delinearize(linearize(form)) == form


def test_delinearize_rejects_unbalanced_sequences():
    good = linearize(build_a_box())
    with pytest.raises(MalformedSequence):
        delinearize(good[:-1])
    with pytest.raises(MalformedSequence):
        delinearize(good + [")"])


def test_delinearize_rejects_unknown_keys():
    with pytest.raises(MalformedSequence):
        delinearize(["(dialogue_type", "HUMAN_GIVE_COMMAND", ")", "(bogus_key", "x", ")"])


def test_to_dict_mirrors_wire_shape():
    doc = to_dict(dig_moat_around_fort())
    action = doc["action_sequence"][0]
    assert action["location"]["relative_direction"] == "AROUND"
    clause = action["location"]["reference_object"]["filters"]["where_clause"]
    assert clause["AND"] == [{"pred_text": "has_name", "obj_text": [0, [5, 5]]}]
