"""Quality of generated hints: sub-instruction BLEU, ambiguity accuracy and distinctive-object accuracy.

All functions take the per-step hint rows written by evaluation
(``episode_id, world_id, step, node, selected, teacher, generated, gold``)
and recompute ground truth from the worlds, so they are pure functions of
their inputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import SchemaError, UndefinedInputError
from .hints import VISIBILITY_CATEGORIES, AmbiguityCategory, ParsedHint, classify_ambiguity, parse_hint
from .lexicon import Lexicon, load_lexicon
from .metrics import bleu
from .train import RolloutRecord
from .world import World, candidate_views

REPORT_VERSION = "1.0"
MODES = ("exact", "object")
BUCKETS = ("right", "wrong")


@dataclass
class Bucket:
    total: int = 0
    true: int = 0

    @property
    def fraction(self) -> float | None:
        return self.true / self.total if self.total else None

    def add(self, ok: bool) -> None:
        self.total += 1
        self.true += int(ok)

    def to_dict(self) -> dict:
        return {"total": self.total, "true": self.true, "fraction": self.fraction}


@dataclass
class HintQualityReport:
    bleu1: float | None
    bleu4: float | None
    bleu_pairs: int
    ambiguity: dict[str, Bucket]
    distinctive: dict[str, dict[str, Bucket]]
    unattributed: int = 0
    any_true: bool = False
    schema_version: str = REPORT_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "bleu1": self.bleu1,
            "bleu4": self.bleu4,
            "bleu_pairs": self.bleu_pairs,
            "ambiguity": {k: b.to_dict() for k, b in self.ambiguity.items()},
            "distinctive": {m: {k: b.to_dict() for k, b in bs.items()} for m, bs in self.distinctive.items()},
            "unattributed": self.unattributed,
            "any_true": self.any_true,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HintQualityReport":
        if str(d.get("schema_version", "")).split(".")[0] != REPORT_VERSION.split(".")[0]:
            raise SchemaError(f"unsupported hint report version {d.get('schema_version')!r}")
        amb = {k: Bucket(v["total"], v["true"]) for k, v in d["ambiguity"].items()}
        dist = {m: {k: Bucket(v["total"], v["true"]) for k, v in bs.items()} for m, bs in d["distinctive"].items()}
        return cls(d["bleu1"], d["bleu4"], d["bleu_pairs"], amb, dist, d.get("unattributed", 0),
                   d.get("any_true", False))


def _parse(text: str | None, lex: Lexicon) -> ParsedHint:
    return parse_hint(text or "", require_sub=False, lexicon=lex)


def sub_instruction_bleu(rows: Iterable[Mapping], lexicon: Lexicon | None = None
                         ) -> tuple[float | None, float | None, int]:
    """Corpus BLEU-1 and BLEU-4 over sub-instruction clauses of rows that have a gold hint.

    A generated hint without a well-formed sub-instruction clause scores as an
    empty candidate. Returns ``(None, None, 0)`` when no row has a gold
    sub-instruction (for example when the sub part is disabled).
    """
    lex = lexicon or load_lexicon()
    cands, refs = [], []
    for row in rows:
        gold = _parse(row.get("gold"), lex).sub_instruction
        if gold is None:
            continue
        cand = _parse(row.get("generated"), lex).sub_instruction
        cands.append(list(cand or ()))
        refs.append(list(gold))
    if not refs:
        return None, None, 0
    try:
        return bleu(1, cands, refs), bleu(4, cands, refs), len(refs)
    except UndefinedInputError:
        return None, None, 0


def _views_for(row: Mapping, worlds: Mapping[str, World]):
    world = worlds[row["world_id"]]
    views = candidate_views(world, int(row["node"]))
    index = {v.neighbor: i for i, v in enumerate(views)}
    return views, index


def ambiguity_accuracy(rows: Iterable[Mapping], worlds: Mapping[str, World], any_true: bool = False,
                       lexicon: Lexicon | None = None) -> tuple[dict[str, Bucket], int]:
    """Per-category totals and TRUE counts for generated ambiguity clauses.

    Each clause is checked against the step's actual views with the teacher
    view as target. By default every listed landmark must have the claimed
    category; ``any_true`` relaxes that to at least one. Malformed clauses
    that name a category count as FALSE for it; malformed sentences that
    cannot be attributed are returned as the second value.
    """
    lex = lexicon or load_lexicon()
    out = {c.value: Bucket() for c in VISIBILITY_CATEGORIES}
    unattributed = 0
    for row in rows:
        if row.get("teacher") is None:
            continue
        parsed = _parse(row.get("generated"), lex)
        unattributed += parsed.invalid
        views, index = _views_for(row, worlds)
        target = index[int(row["teacher"])]
        for cat in VISIBILITY_CATEGORIES:
            ok = parsed.valid.get(cat.value)
            if ok is None:
                continue
            if not ok:
                out[cat.value].add(False)
                continue
            landmarks = parsed.landmark_groups.get(cat, ())
            actual, _ = classify_ambiguity(landmarks, views, target, lex)
            hits = [a == cat for a in actual]
            out[cat.value].add(bool(hits) and (any(hits) if any_true else all(hits)))
    return out, unattributed


def _selected_teacher(row: Mapping, rollouts: Mapping[tuple[str, int], tuple[int | None, int | None]] | None):
    if rollouts is not None and (row["episode_id"], int(row["step"])) in rollouts:
        return rollouts[(row["episode_id"], int(row["step"]))]
    return row.get("selected"), row.get("teacher")


def rollout_index(rollouts: Iterable[RolloutRecord]) -> dict[tuple[str, int], tuple[int | None, int | None]]:
    """(episode_id, step) -> (selected neighbor, teacher neighbor)."""
    out = {}
    for rec in rollouts:
        for t, st in enumerate(rec.steps):
            sel = st.candidates[st.action] if st.action >= 0 else None
            tea = st.candidates[st.teacher] if st.teacher >= 0 else None
            out[(rec.episode_id, t)] = (sel, tea)
    return out


def distinctive_accuracy(rows: Iterable[Mapping], worlds: Mapping[str, World],
                         rollouts: Iterable[RolloutRecord] | None = None,
                         lexicon: Lexicon | None = None) -> dict[str, dict[str, Bucket]]:
    """Accuracy of generated distinctive clauses against the agent's selected view.

    Object mode: every listed head noun occurs in the selected view and in no
    other candidate view. Exact mode additionally requires each full phrase
    (attributes and noun) to be present in the selected view, so exact
    accuracy never exceeds object accuracy. Steps are bucketed by whether the
    selected view is the teacher view.
    """
    lex = lexicon or load_lexicon()
    index_rollouts = rollout_index(rollouts) if rollouts is not None else None
    out = {m: {b: Bucket() for b in BUCKETS} for m in MODES}
    for row in rows:
        selected, teacher = _selected_teacher(row, index_rollouts)
        if selected is None:
            continue
        parsed = _parse(row.get("generated"), lex)
        ok = parsed.valid.get("distinctive")
        if ok is None:
            continue
        bucket = "right" if selected == teacher else "wrong"
        if not ok or not parsed.distinctive_objects:
            out["object"][bucket].add(False)
            out["exact"][bucket].add(False)
            continue
        views, index = _views_for(row, worlds)
        sel = views[index[int(selected)]]
        others = {lex.singularize(o.head_noun) for v in views if v.neighbor != sel.neighbor for o in v.objects}
        sel_nouns = {lex.singularize(o.head_noun) for o in sel.objects}
        sel_phrases = {o.phrase for o in sel.objects}
        obj_ok = exact_ok = True
        for phrase in parsed.distinctive_objects:
            noun = lex.singularize(phrase.split()[-1])
            exclusive = noun in sel_nouns and noun not in others
            obj_ok &= exclusive
            exact_ok &= exclusive and phrase in sel_phrases
        out["object"][bucket].add(obj_ok)
        out["exact"][bucket].add(exact_ok)
    return out


def analyze(rows: Sequence[Mapping], worlds: Mapping[str, World], rollouts: Iterable[RolloutRecord] | None = None,
            any_true: bool = False) -> HintQualityReport:
    lex = load_lexicon()
    b1, b4, n = sub_instruction_bleu(rows, lex)
    amb, unattributed = ambiguity_accuracy(rows, worlds, any_true, lex)
    dist = distinctive_accuracy(rows, worlds, rollouts, lex)
    return HintQualityReport(b1, b4, n, amb, dist, unattributed, any_true)


def load_hint_rows(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def dumps_report(report: HintQualityReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
