"""Biomedical entity dictionary and span annotation.

The lexicon is a TSV dump of knowledge-graph terms (term<TAB>category).
Terms are stored under their token-sequence key, so lookup semantics are
those of the tokenizer, never raw bytes.  Annotation is exact-match,
leftmost-longest, non-overlapping.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import InputFormatError
from .matcher import TokenMatcher, TokenKey
from .tokenizer import token_texts

logger = logging.getLogger(__name__)

CATEGORIES = ("syndrome", "disease", "examination", "treatment", "drug", "other")


@dataclass(frozen=True)
class EntityMatch:
    """Annotated span, half-open token indices into the sentence."""

    token_start: int
    token_end: int
    category: str


class EntityLexicon:
    """Term dictionary keyed by token sequence.

    `dropped` counts input terms that tokenized to nothing and were
    discarded at load time.
    """

    def __init__(self):
        self._entries: dict[TokenKey, tuple[str, str]] = {}  # key -> (category, surface)
        self.dropped = 0
        self._matcher: TokenMatcher | None = None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: TokenKey) -> bool:
        return tuple(key) in self._entries

    def add(self, surface: str, category: str, line_no: int | None = None) -> None:
        where = f"line {line_no}: " if line_no is not None else ""
        if category not in CATEGORIES:
            raise InputFormatError(
                f"{where}unknown category {category!r} (expected one of "
                f"{', '.join(CATEGORIES)})"
            )
        key = tuple(token_texts(surface))
        if not key:
            self.dropped += 1
            return
        existing = self._entries.get(key)
        if existing is not None and existing[0] != category:
            raise InputFormatError(
                f"{where}term {surface!r} already loaded with category "
                f"{existing[0]!r}, now {category!r}"
            )
        if existing is None:
            self._entries[key] = (category, surface)
            self._matcher = None

    def category_of(self, key: TokenKey) -> str:
        return self._entries[tuple(key)][0]

    def items(self) -> list[tuple[TokenKey, str, str]]:
        """(token_key, category, surface) sorted by token key."""
        return sorted(
            (key, cat, surface) for key, (cat, surface) in self._entries.items()
        )

    def surfaces(self) -> list[str]:
        return [surface for _, _, surface in self.items()]

    def category_counts(self) -> dict[str, int]:
        counts = {cat: 0 for cat in CATEGORIES}
        for _, (cat, _) in self._entries.items():
            counts[cat] += 1
        return counts

    def matcher(self) -> TokenMatcher:
        if self._matcher is None:
            self._matcher = TokenMatcher(
                (key, cat) for key, (cat, _) in self._entries.items()
            )
        return self._matcher

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            for _, category, surface in self.items():
                f.write(f"{surface}\t{category}\n")


def load_lexicon(path: str) -> EntityLexicon:
    lex = EntityLexicon()
    with open(path, "rb") as f:
        data = f.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()  # trailing newline
    for line_no, line in enumerate(lines, start=1):
        columns = line.split("\t")
        if len(columns) != 2:
            raise InputFormatError(
                f"{path}: line {line_no}: expected 2 tab-separated columns, "
                f"got {len(columns)}"
            )
        try:
            lex.add(columns[0], columns[1], line_no)
        except InputFormatError as exc:
            raise InputFormatError(f"{path}: {exc}") from None
    if lex.dropped:
        logger.warning("%s: dropped %d terms that tokenized to nothing", path, lex.dropped)
    return lex


def annotate_entities(tokens: list[str], lex: EntityLexicon) -> list[EntityMatch]:
    """Leftmost-longest entity annotation over a token-text sequence."""
    if len(lex) == 0:
        return []
    return [
        EntityMatch(start, end, category)
        for start, end, category in lex.matcher().leftmost_longest(tokens)
    ]
