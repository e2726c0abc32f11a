"""Bundled object lexicon and the suffix rules used for number agreement."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class Lexicon:
    version: str
    common_nouns: tuple[str, ...]
    scene_nouns: tuple[str, ...]
    object_nouns: tuple[str, ...]
    pluralizable: frozenset[str]
    attributes: frozenset[str]
    motion_words: frozenset[str]

    @property
    def nouns(self) -> frozenset[str]:
        return frozenset(self.common_nouns + self.scene_nouns + self.object_nouns)

    def singularize(self, word: str) -> str:
        return singularize(word, self.nouns)

    def is_noun(self, word: str) -> bool:
        return word not in self.motion_words and self.singularize(word) in self.nouns

    def is_attribute(self, word: str) -> bool:
        return word in self.attributes


def singularize(word: str, nouns: frozenset[str] | set[str] = frozenset()) -> str:
    """Map a plural surface form to its singular.

    Words already in ``nouns`` are returned unchanged, so lexicon entries that
    happen to end in ``s`` survive. Otherwise ``-ies`` becomes ``-y`` and a
    single trailing ``s`` is stripped (``-ss`` words are left alone).
    """
    if word in nouns:
        return word
    if word.endswith("ies") and len(word) > 3:
        return word[:-3] + "y"
    if word.endswith("ss"):
        return word
    if word.endswith("s") and len(word) > 1:
        return word[:-1]
    return word


def pluralize(noun: str) -> str:
    if noun.endswith("y") and noun[-2:-1] not in "aeiou":
        return noun[:-1] + "ies"
    return noun + "s"


@lru_cache(maxsize=None)
def load_lexicon() -> Lexicon:
    raw = json.loads(resources.files("navhint.data").joinpath("lexicon.json").read_text())
    lex = Lexicon(
        version=raw["version"],
        common_nouns=tuple(raw["common_nouns"]),
        scene_nouns=tuple(raw["scene_nouns"]),
        object_nouns=tuple(raw["object_nouns"]),
        pluralizable=frozenset(raw["pluralizable"]),
        attributes=frozenset(raw["attributes"]),
        motion_words=frozenset(raw["motion_words"]),
    )
    overlap = lex.nouns & (lex.attributes | lex.motion_words)
    if overlap:
        raise ValueError(f"lexicon nouns overlap attributes/motion words: {sorted(overlap)}")
    return lex
