import pytest
from hypothesis import given
from hypothesis import strategies as st

from navhint.errors import HintParseError, WorldReferenceError
from navhint.hints import (
    HINT_PARTS,
    AmbiguityCategory,
    HintRecord,
    LandmarkPhrase,
    build_hint_dataset,
    classify_ambiguity,
    dataset_stats,
    detokenize_hint,
    extract_landmarks,
    landmark_category,
    load_hints,
    parse_hint,
    render_hint,
    save_hints,
    select_distinctive_objects,
    tokenize_hint,
)
from navhint.lexicon import load_lexicon
from navhint.world import CandidateView, VisualObject, candidate_views

A = AmbiguityCategory


def view(neighbor, *nouns):
    return CandidateView(neighbor, 0.0, 0.0, tuple(VisualObject(n) for n in nouns))


def oracle_category(noun, views, target):
    """Literal reading of the four visibility definitions."""
    seen = [any(o.head_noun == noun for o in v.objects) for v in views]
    others = [s for i, s in enumerate(seen) if i != target]
    if seen[target] and not any(others):
        return A.TARGET
    if seen[target]:
        return A.MULTIPLE
    if any(others):
        return A.MISSING
    return A.INVISIBLE


@pytest.mark.parametrize("target_has,others_have,expected", [
    (True, False, A.TARGET),
    (True, True, A.MULTIPLE),
    (False, True, A.MISSING),
    (False, False, A.INVISIBLE),
])
def test_classify_single_landmark(target_has, others_have, expected):
    views = [view(0, "lamp" if target_has else "sofa"), view(1, "lamp" if others_have else "rug"), view(2, "door")]
    cats, step = classify_ambiguity([LandmarkPhrase("lamp")], views, 0)
    assert cats == [expected] and step == expected


def test_no_landmarks_is_none():
    cats, step = classify_ambiguity([], [view(0, "lamp"), view(1, "rug")], 1)
    assert cats == [] and step == A.NONE


def test_precedence():
    views = [view(0, "lamp", "sofa"), view(1, "sofa", "rug")]
    lms = [LandmarkPhrase("lamp"), LandmarkPhrase("sofa"), LandmarkPhrase("rug"), LandmarkPhrase("chair")]
    cats, step = classify_ambiguity(lms, views, 0)
    assert cats == [A.TARGET, A.MULTIPLE, A.MISSING, A.INVISIBLE]
    assert step == A.MISSING
    _, step = classify_ambiguity(lms[:2] + lms[3:], views, 0)
    assert step == A.MULTIPLE
    _, step = classify_ambiguity([lms[0], lms[3]], views, 0)
    assert step == A.TARGET


def test_plural_matches_singular():
    views = [view(0, "lamps"), view(1, "rug")]
    cats, _ = classify_ambiguity([LandmarkPhrase("lamp")], views, 0)
    assert cats == [A.TARGET]


def test_target_index_out_of_range():
    with pytest.raises(IndexError):
        classify_ambiguity([], [view(0, "lamp")], 3)
    with pytest.raises(IndexError):
        select_distinctive_objects([view(0, "lamp")], -1)


def test_distinctive_objects_brute_force(worlds):
    lex = load_lexicon()
    for w in list(worlds.values())[:3]:
        for node in w.nodes:
            views = candidate_views(w, node)
            for t in range(len(views)):
                picked = select_distinctive_objects(views, t, max_count=100)
                for o in views[t].objects:
                    noun = lex.singularize(o.head_noun)
                    exclusive = all(lex.singularize(p.head_noun) != noun
                                    for i, v in enumerate(views) if i != t for p in v.objects)
                    assert (o.phrase in picked) == exclusive
                assert select_distinctive_objects(views, t) == picked[:3]


def test_extract_landmarks():
    lms = extract_landmarks("walk past the red sofa and stop at the lamps".split())
    assert [lm.phrase for lm in lms] == ["red sofa", "lamps"]
    assert extract_landmarks("turn left".split()) == []


def test_records_match_oracle(hint_records, episodes, worlds):
    by_id = {ep.episode_id: ep for ep in episodes}
    lex = load_lexicon()
    for rec in hint_records:
        ep = by_id[rec.episode_id]
        w = worlds[ep.world_id]
        views = candidate_views(w, ep.path[rec.step_index])
        target = [v.neighbor for v in views].index(ep.path[rec.step_index + 1])
        for cat, group in rec.landmark_groups.items():
            for lm in group:
                assert oracle_category(lex.singularize(lm.head_noun), [
                    CandidateView(v.neighbor, 0, 0, tuple(VisualObject(lex.singularize(o.head_noun))
                                                          for o in v.objects)) for v in views], target) == cat
        if rec.step_category in (A.TARGET, A.NONE):
            assert rec.distinctive_objects == ()


def test_render_parse_roundtrip(hint_records):
    for rec in hint_records:
        parsed = parse_hint(rec.rendered)
        assert parsed.sub_instruction == rec.sub_instruction
        assert {c: tuple(lm.phrase for lm in g) for c, g in parsed.landmark_groups.items()} == \
            {c: tuple(lm.phrase for lm in g) for c, g in rec.landmark_groups.items() if g}
        assert parsed.distinctive_objects == rec.distinctive_objects
        assert landmark_category(parsed) == rec.step_category
        assert all(parsed.valid.values()) and parsed.invalid == 0


def test_render_templates():
    rec = HintRecord("e", 0, ("go", "past", "the", "lamp"), {A.MULTIPLE: (LandmarkPhrase("lamp"),)},
                     ("red sofa", "rug"), A.MULTIPLE)
    assert render_hint(rec) == ("The go past the lamp needs to be executed. "
                                "The lamp are observed in multiple viewpoints. "
                                "However, red sofa, rug are in the targeted view.")
    assert render_hint(rec, parts=["sub"]) == "The go past the lamp needs to be executed."
    assert render_hint(rec, parts=[]) == ""
    with pytest.raises(ValueError):
        render_hint(rec, parts=["bogus"])


def test_single_clause_keeps_step_category():
    rec = HintRecord("e", 0, ("x",), {A.TARGET: (LandmarkPhrase("lamp"),), A.MISSING: (LandmarkPhrase("rug"),)},
                     (), A.MISSING)
    text = render_hint(rec, single_clause=True)
    assert "misleading" in text and " are observed." not in text


def test_parse_flags_malformed():
    parsed = parse_hint("The go left needs to be executed. The lamp are observed wrongly. Nonsense here.")
    assert parsed.valid["sub"] is True
    assert parsed.valid[A.TARGET.value] is False
    assert parsed.invalid == 1
    with pytest.raises(HintParseError):
        parse_hint("The lamp are observed.")
    assert parse_hint("The lamp are observed.", require_sub=False).landmark_groups[A.TARGET][0].phrase == "lamp"


@given(st.lists(st.sampled_from(["The", "lamp", "are", "observed", ".", ",", "However", "red"]), max_size=30))
def test_parse_never_crashes(tokens):
    parse_hint(detokenize_hint(tokens), require_sub=False)


def test_tokenize_roundtrip(hint_records):
    for rec in hint_records[:200]:
        assert detokenize_hint(tokenize_hint(rec.rendered)) == rec.rendered


def test_dataset_sorted_and_complete(hint_records, episodes):
    assert [(r.episode_id, r.step_index) for r in hint_records] == sorted(
        (ep.episode_id, h) for ep in episodes for h in range(len(ep.path) - 1))


def test_missing_world(episodes):
    with pytest.raises(WorldReferenceError):
        build_hint_dataset(episodes[:1], {})


def test_hints_roundtrip(tmp_path, hint_records):
    path = save_hints(hint_records, tmp_path / "h.jsonl")
    assert load_hints(path) == hint_records


def test_stats(hint_records):
    stats = dataset_stats({"a": hint_records[:10], "b": hint_records[10:]})
    assert stats["total"] == len(hint_records)
    assert sum(stats["histogram"].values()) == len(hint_records)
    assert stats["splits"] == {"a": 10, "b": len(hint_records) - 10}
    with pytest.raises(ValueError):
        dataset_stats([])


def test_hint_parts_constant():
    assert HINT_PARTS == {"sub", "ambiguity", "distinctive"}
