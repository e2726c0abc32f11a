"""Navigation hint construction: landmarks, ambiguity categories, distinctive objects, templates.

A hint for one navigation step has up to three parts::

    The walk into the hallway needs to be executed.        <- sub-instruction
    The hallway are misleading.                             <- landmark ambiguity
    However, wooden dining table, marble countertop are in the targeted view.

:func:`render_hint` and :func:`parse_hint` are inverse on every machine-built
record.
"""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import HintParseError, WorldReferenceError
from .lexicon import Lexicon, load_lexicon
from .world import CandidateView, Episode, World, candidate_views

HINT_PARTS = frozenset({"sub", "ambiguity", "distinctive"})


class AmbiguityCategory(str, enum.Enum):
    TARGET = "TargetLandmarks"
    MULTIPLE = "MultipleLandmarks"
    MISSING = "MissingLandmarks"
    INVISIBLE = "InvisibleLandmarks"
    NONE = "NoLandmarks"


VISIBILITY_CATEGORIES = (
    AmbiguityCategory.TARGET,
    AmbiguityCategory.MULTIPLE,
    AmbiguityCategory.MISSING,
    AmbiguityCategory.INVISIBLE,
)
# step label when a step mixes categories
PRECEDENCE = (
    AmbiguityCategory.MISSING,
    AmbiguityCategory.MULTIPLE,
    AmbiguityCategory.TARGET,
    AmbiguityCategory.INVISIBLE,
)
CLAUSE_PREDICATES = {
    AmbiguityCategory.TARGET: "observed",
    AmbiguityCategory.MULTIPLE: "observed in multiple viewpoints",
    AmbiguityCategory.MISSING: "misleading",
    AmbiguityCategory.INVISIBLE: "not observed",
}
_PREDICATE_TO_CATEGORY = {v: k for k, v in CLAUSE_PREDICATES.items()}


@dataclass(frozen=True)
class LandmarkPhrase:
    head_noun: str
    attributes: tuple[str, ...] = ()
    source_span: tuple[int, int] | None = None

    @property
    def phrase(self) -> str:
        return " ".join(self.attributes + (self.head_noun,))

    def to_dict(self) -> dict:
        return {"head_noun": self.head_noun, "attributes": list(self.attributes),
                "source_span": list(self.source_span) if self.source_span is not None else None}

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkPhrase":
        span = d.get("source_span")
        return cls(d["head_noun"], tuple(d["attributes"]), tuple(span) if span is not None else None)


@dataclass(frozen=True)
class HintRecord:
    episode_id: str
    step_index: int
    sub_instruction: tuple[str, ...]
    landmark_groups: Mapping[AmbiguityCategory, tuple[LandmarkPhrase, ...]]
    distinctive_objects: tuple[str, ...]
    step_category: AmbiguityCategory
    rendered: str = ""

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "step_index": self.step_index,
            "sub_instruction": list(self.sub_instruction),
            "landmark_groups": {c.value: [lm.to_dict() for lm in self.landmark_groups[c]]
                                for c in VISIBILITY_CATEGORIES if c in self.landmark_groups},
            "distinctive_objects": list(self.distinctive_objects),
            "step_category": self.step_category.value,
            "rendered": self.rendered,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HintRecord":
        return cls(
            episode_id=d["episode_id"],
            step_index=int(d["step_index"]),
            sub_instruction=tuple(d["sub_instruction"]),
            landmark_groups={AmbiguityCategory(c): tuple(LandmarkPhrase.from_dict(x) for x in lms)
                             for c, lms in d["landmark_groups"].items()},
            distinctive_objects=tuple(d["distinctive_objects"]),
            step_category=AmbiguityCategory(d["step_category"]),
            rendered=d["rendered"],
        )


# ---------------------------------------------------------------------------
# landmarks


def extract_landmarks(sub_instruction: Sequence[str], lexicon: Lexicon | None = None) -> list[LandmarkPhrase]:
    """Maximal ``attribute* noun`` chunks whose noun is in the lexicon.

    Attribute runs not closed by a lexicon noun are dropped; repeated phrases
    keep their first occurrence.
    """
    lex = lexicon or load_lexicon()
    out: list[LandmarkPhrase] = []
    seen: set[str] = set()
    i = 0
    n = len(sub_instruction)
    while i < n:
        j = i
        while j < n and lex.is_attribute(sub_instruction[j]):
            j += 1
        if j < n and lex.is_noun(sub_instruction[j]):
            lm = LandmarkPhrase(sub_instruction[j], tuple(sub_instruction[i:j]), (i, j + 1))
            if lm.phrase not in seen:
                seen.add(lm.phrase)
                out.append(lm)
            i = j + 1
        else:
            i = max(j, i + 1)
    return out


def landmark_visible(landmark: LandmarkPhrase, view: CandidateView, lexicon: Lexicon | None = None) -> bool:
    lex = lexicon or load_lexicon()
    noun = lex.singularize(landmark.head_noun)
    return any(lex.singularize(o.head_noun) == noun for o in view.objects)


def classify_ambiguity(landmarks: Sequence[LandmarkPhrase], views: Sequence[CandidateView], target_idx: int,
                       lexicon: Lexicon | None = None) -> tuple[list[AmbiguityCategory], AmbiguityCategory]:
    """Per-landmark visibility category and the step label.

    Returns one category per landmark (same order) and the step category
    chosen by precedence Missing > Multiple > Target > Invisible.
    """
    if not 0 <= target_idx < len(views):
        raise IndexError(f"target index {target_idx} out of range for {len(views)} views")
    lex = lexicon or load_lexicon()
    cats = []
    for lm in landmarks:
        in_target = landmark_visible(lm, views[target_idx], lex)
        elsewhere = any(landmark_visible(lm, v, lex) for i, v in enumerate(views) if i != target_idx)
        if in_target:
            cats.append(AmbiguityCategory.MULTIPLE if elsewhere else AmbiguityCategory.TARGET)
        else:
            cats.append(AmbiguityCategory.MISSING if elsewhere else AmbiguityCategory.INVISIBLE)
    if not cats:
        return cats, AmbiguityCategory.NONE
    step = next(c for c in PRECEDENCE if c in cats)
    return cats, step


def select_distinctive_objects(views: Sequence[CandidateView], target_idx: int, max_count: int = 3,
                               lexicon: Lexicon | None = None) -> list[str]:
    if not 0 <= target_idx < len(views):
        raise IndexError(f"target index {target_idx} out of range for {len(views)} views")
    lex = lexicon or load_lexicon()
    elsewhere = {lex.singularize(o.head_noun) for i, v in enumerate(views) if i != target_idx for o in v.objects}
    picked = [o.phrase for o in views[target_idx].objects if lex.singularize(o.head_noun) not in elsewhere]
    return picked[:max_count]


# ---------------------------------------------------------------------------
# templates


def sub_clause(sub_instruction: Sequence[str]) -> str:
    return f"The {' '.join(sub_instruction)} needs to be executed."


def ambiguity_clause(category: AmbiguityCategory, landmarks: Iterable[LandmarkPhrase | str]) -> str:
    names = ", ".join(lm if isinstance(lm, str) else lm.phrase for lm in landmarks)
    return f"The {names} are {CLAUSE_PREDICATES[category]}."


def distinctive_clause(objects: Iterable[str]) -> str:
    return f"However, {', '.join(objects)} are in the targeted view."


def render_hint(record: HintRecord, parts: Iterable[str] = HINT_PARTS, single_clause: bool = False) -> str:
    """Render a record as hint text.

    ``parts`` drops whole parts (ablations); ``single_clause`` keeps only the
    ambiguity clause of the step category instead of one per landmark group.
    """
    parts = frozenset(parts)
    if not parts <= HINT_PARTS:
        raise ValueError(f"unknown hint parts {sorted(parts - HINT_PARTS)}")
    clauses = []
    if "sub" in parts:
        clauses.append(sub_clause(record.sub_instruction))
    if "ambiguity" in parts:
        for cat in VISIBILITY_CATEGORIES:
            if single_clause and cat != record.step_category:
                continue
            group = record.landmark_groups.get(cat, ())
            if group:
                clauses.append(ambiguity_clause(cat, group))
    if "distinctive" in parts and record.distinctive_objects:
        clauses.append(distinctive_clause(record.distinctive_objects))
    return " ".join(clauses)


@dataclass
class ParsedHint:
    """Best-effort parse of hint text.

    ``valid`` maps clause kinds (``sub``, ambiguity category values,
    ``distinctive``) to whether the clause was well formed; ``invalid``
    counts malformed sentences that could not be attributed to any kind.
    """

    sub_instruction: tuple[str, ...] | None = None
    landmark_groups: dict[AmbiguityCategory, tuple[LandmarkPhrase, ...]] = field(default_factory=dict)
    distinctive_objects: tuple[str, ...] = ()
    valid: dict[str, bool] = field(default_factory=dict)
    invalid: int = 0


_WORDS = r"[a-z]+(?: [a-z]+)*"
_LIST = rf"{_WORDS}(?:, {_WORDS})*"
_SUB_RE = re.compile(rf"The ({_WORDS}) needs to be executed\.")
_AMB_RE = re.compile(rf"The ({_LIST}) are (observed in multiple viewpoints|not observed|observed|misleading)\.")
_DIST_RE = re.compile(rf"However, ({_LIST}) are in the targeted view\.")
_SENTENCE_END = re.compile(r"\.(?:\s+|$)")


def parse_hint(text: str, require_sub: bool = True, lexicon: Lexicon | None = None) -> ParsedHint:
    """Invert :func:`render_hint`.

    With ``require_sub`` a missing or malformed leading sub-instruction clause
    raises :class:`HintParseError`; other malformed sentences are flagged in
    ``ParsedHint.valid`` and skipped.
    """
    lex = lexicon or load_lexicon()
    out = ParsedHint()
    pos = 0
    text = text.strip()
    first = True
    while pos < len(text):
        while pos < len(text) and text[pos] == " ":
            pos += 1
        if pos >= len(text):
            break
        m = _SUB_RE.match(text, pos) if first else None
        if m:
            out.sub_instruction = tuple(m.group(1).split())
            out.valid["sub"] = True
            pos = m.end()
            first = False
            continue
        if first and require_sub:
            raise HintParseError("expected 'The <sub-instruction> needs to be executed.'", pos)
        first = False
        m = _AMB_RE.match(text, pos)
        if m:
            cat = _PREDICATE_TO_CATEGORY[m.group(2)]
            out.landmark_groups[cat] = out.landmark_groups.get(cat, ()) + tuple(
                _landmark_from_phrase(p, out.sub_instruction, lex) for p in m.group(1).split(", "))
            out.valid[cat.value] = True
            pos = m.end()
            continue
        m = _DIST_RE.match(text, pos)
        if m:
            out.distinctive_objects = tuple(m.group(1).split(", "))
            out.valid["distinctive"] = True
            pos = m.end()
            continue
        # malformed sentence: flag it and resynchronise after the next period
        end = _SENTENCE_END.search(text, pos)
        stop = end.end() if end else len(text)
        sentence = text[pos:stop]
        kind = _guess_kind(sentence)
        if kind is None:
            out.invalid += 1
        else:
            out.valid[kind] = False
        pos = stop
    return out


def _guess_kind(sentence: str) -> str | None:
    if sentence.startswith("However"):
        return "distinctive"
    if "needs to be executed" in sentence:
        return "sub"
    for predicate in sorted(_PREDICATE_TO_CATEGORY, key=len, reverse=True):
        if f" are {predicate}" in sentence:
            return _PREDICATE_TO_CATEGORY[predicate].value
    return None


def _landmark_from_phrase(phrase: str, sub: tuple[str, ...] | None, lex: Lexicon) -> LandmarkPhrase:
    words = tuple(phrase.split())
    if sub is not None:
        for lm in extract_landmarks(sub, lex):
            if lm.phrase == phrase:
                return lm
    return LandmarkPhrase(words[-1], words[:-1], None)


def landmark_category(parsed: ParsedHint) -> AmbiguityCategory:
    """Step label of a parsed hint under the usual precedence."""
    for cat in PRECEDENCE:
        if parsed.landmark_groups.get(cat):
            return cat
    return AmbiguityCategory.NONE


# ---------------------------------------------------------------------------
# dataset


def build_hint_record(episode: Episode, world: World, hop: int, lexicon: Lexicon | None = None) -> HintRecord:
    lex = lexicon or load_lexicon()
    u, v = episode.path[hop], episode.path[hop + 1]
    views = candidate_views(world, u)
    target = next(i for i, view in enumerate(views) if view.neighbor == v)
    sub = episode.sub_instruction(hop)
    landmarks = extract_landmarks(sub, lex)
    cats, step = classify_ambiguity(landmarks, views, target, lex)
    groups: dict[AmbiguityCategory, tuple[LandmarkPhrase, ...]] = {}
    for lm, cat in zip(landmarks, cats):
        groups[cat] = groups.get(cat, ()) + (lm,)
    distinctive: tuple[str, ...] = ()
    if step not in (AmbiguityCategory.TARGET, AmbiguityCategory.NONE):
        distinctive = tuple(select_distinctive_objects(views, target, 3, lex))
    record = HintRecord(episode.episode_id, hop, tuple(sub), groups, distinctive, step)
    return HintRecord(record.episode_id, hop, record.sub_instruction, groups, distinctive, step,
                      render_hint(record))


def build_hint_dataset(episodes: Iterable[Episode], worlds: Mapping[str, World],
                       lexicon: Lexicon | None = None) -> list[HintRecord]:
    """One record per (episode, hop), ordered by (episode_id, step_index)."""
    lex = lexicon or load_lexicon()
    records = []
    for ep in episodes:
        world = worlds.get(ep.world_id)
        if world is None:
            raise WorldReferenceError(f"episode {ep.episode_id} references unknown world {ep.world_id}")
        records.extend(build_hint_record(ep, world, hop, lex) for hop in range(len(ep.path) - 1))
    records.sort(key=lambda r: (r.episode_id, r.step_index))
    return records


def dataset_stats(records: Iterable[HintRecord] | Mapping[str, Iterable[HintRecord]]) -> dict:
    """Step-category histogram; a mapping of split -> records also yields per-split counts."""
    if isinstance(records, Mapping):
        per_split = {split: list(rs) for split, rs in records.items()}
        merged = [r for rs in per_split.values() for r in rs]
    else:
        per_split = None
        merged = list(records)
    if not merged:
        raise ValueError("dataset is empty")
    hist = Counter(r.step_category.value for r in merged)
    out = {
        "histogram": {c.value: hist[c.value] for c in AmbiguityCategory if hist[c.value]},
        "total": len(merged),
    }
    if per_split is not None:
        out["splits"] = {split: len(rs) for split, rs in per_split.items()}
    return out


def dumps_hints(records: Iterable[HintRecord]) -> str:
    return "".join(json.dumps(r.to_dict()) + "\n" for r in records)


def save_hints(records: Iterable[HintRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_hints(records))
    return path


def load_hints(path: str | Path) -> list[HintRecord]:
    with open(path) as fh:
        return [HintRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# hint tokens

_TOKEN_RE = re.compile(r"[A-Za-z]+|[.,]")


def tokenize_hint(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def detokenize_hint(tokens: Sequence[str]) -> str:
    return re.sub(r" ([.,])", r"\1", " ".join(tokens))
