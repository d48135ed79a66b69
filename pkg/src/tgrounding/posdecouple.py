"""Lexicon PoS tagging and the relation/modified split of a query."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

TAGS = ("NOUN", "VERB", "AUX", "ADJ", "ADV", "DET", "PRON", "ADP", "NUM", "OTHER")
RELATION_TAGS = frozenset({"NOUN", "VERB"})


class EmptyQueryError(ValueError):
    pass


@dataclass(frozen=True)
class TagLexicon:
    entries: Mapping[str, str]
    default: str = "NOUN"

    def __post_init__(self):
        bad = {t for t in self.entries.values() if t not in TAGS}
        if bad or self.default not in TAGS:
            raise ValueError(f"unknown tags in lexicon: {sorted(bad | ({self.default} - set(TAGS)))}")

    def lookup(self, word: str) -> str:
        return self.entries.get(word, self.default)

    def __contains__(self, word):
        return word in self.entries

    @classmethod
    def from_file(cls, path, default="NOUN"):
        """Read ``word<TAB>TAG`` lines (UTF-8)."""
        with open(path, encoding="utf-8") as fh:
            return cls(_parse_pairs(fh, str(path)), default)

    @classmethod
    def default_english(cls):
        text = resources.files("tgrounding.data").joinpath("lexicon.tsv").read_text("utf-8")
        return cls(_parse_pairs(text.splitlines(), "lexicon.tsv"))


def _parse_pairs(lines: Iterable[str], source: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected 'word<TAB>TAG'")
        out[parts[0].strip().lower()] = parts[1].strip().upper()
    return out


@dataclass(frozen=True)
class Query:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    relation_indices: tuple[int, ...]
    modified_indices: tuple[int, ...]

    def __post_init__(self):
        S = len(self.tokens)
        if S < 1:
            raise EmptyQueryError("empty query")
        if len(self.tags) != S:
            raise ValueError("one tag per token required")
        rel, mod = set(self.relation_indices), set(self.modified_indices)
        if rel & mod or rel | mod != set(range(S)) or not rel:
            raise ValueError("relation/modified indices must partition the query")

    @property
    def relation_tokens(self) -> list[str]:
        return [self.tokens[i] for i in self.relation_indices]

    @property
    def modified_tokens(self) -> list[str]:
        return [self.tokens[i] for i in self.modified_indices]

    def to_text(self) -> str:
        return " ".join(self.tokens)


def tag_words(tokens: Sequence[str], lexicon: TagLexicon) -> list[str]:
    if len(tokens) == 0:
        raise EmptyQueryError("empty query")
    return [lexicon.lookup(w) for w in tokens]


def partition(tags: Sequence[str], relation_tags=RELATION_TAGS) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split token indices into (relation, modified).

    A query with no relation-tagged word puts every index on the relation side.
    """
    rel = tuple(i for i, t in enumerate(tags) if t in relation_tags)
    if not rel:
        return tuple(range(len(tags))), ()
    mod = tuple(i for i, t in enumerate(tags) if t not in relation_tags)
    return rel, mod


def make_query(tokens: Sequence[str] | str, lexicon: TagLexicon | None = None,
               tags: Sequence[str] | None = None, relation_tags=RELATION_TAGS) -> Query:
    """Tokenize (if given a string), tag and partition a query."""
    if isinstance(tokens, str):
        tokens = tokens.lower().split()
    tokens = tuple(w.lower() for w in tokens)
    if tags is None:
        tags = tag_words(tokens, lexicon or TagLexicon.default_english())
    elif len(tags) != len(tokens):
        raise ValueError("one tag per token required")
    rel, mod = partition(tags, relation_tags)
    return Query(tokens, tuple(tags), rel, mod)


def read_tag_file(path) -> list[list[tuple[str, str]]]:
    """Read externally produced tags: ``token<TAB>TAG`` per line, blank line between queries."""
    queries, current = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if current:
                    queries.append(current)
                    current = []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'token<TAB>TAG'")
            tag = parts[1].strip().upper()
            current.append((parts[0].strip().lower(), tag if tag in TAGS else "OTHER"))
    if current:
        queries.append(current)
    return queries


def write_lexicon(lexicon: TagLexicon, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w, t in sorted(lexicon.entries.items()):
            fh.write(f"{w}\t{t}\n")
