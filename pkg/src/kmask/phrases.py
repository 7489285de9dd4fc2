"""Candidate phrase mining: frequency, cohesion, and boundary entropy.

Candidates are intra-sentence token n-grams (2..max_n) above a count
threshold.  Cohesion is a pointwise-mutual-information score in natural
log units, taken as the minimum over the n-gram's binary splits so a long
candidate is only as strong as its weakest internal boundary.  Boundary
entropy is the smaller Shannon entropy of the left/right neighbor
distributions; sentence edges count as a distinguished boundary symbol.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InputFormatError
from .corpus import Document
from .tokenizer import token_texts

TokenKey = tuple[str, ...]

# Placeholder for a sentence edge in neighbor distributions; never equal
# to a token text because token texts are strings.
_EDGE = None


@dataclass
class PhraseCandidate:
    tokens: TokenKey
    count: int
    cohesion: float
    boundary_entropy: float
    external: bool = False
    quality: float | None = None

    @property
    def text(self) -> str:
        return "".join(self.tokens)


class CorpusStats:
    """Token n-gram statistics over a tokenized corpus (one pass, reusable)."""

    def __init__(self, sentences: list[list[str]], max_n: int):
        self.sentences = sentences
        self.max_n = max_n
        self.total_tokens = sum(len(s) for s in sentences)
        self.counts: dict[TokenKey, int] = {}
        for sent in sentences:
            for n in range(1, max_n + 1):
                for i in range(len(sent) - n + 1):
                    key = tuple(sent[i : i + n])
                    self.counts[key] = self.counts.get(key, 0) + 1

    @classmethod
    def from_documents(cls, docs: Iterable[Document], max_n: int) -> "CorpusStats":
        sentences = [token_texts(s) for doc in docs for s in doc.sentences]
        return cls(sentences, max_n)

    def count_of(self, key: TokenKey) -> int:
        if len(key) <= self.max_n:
            return self.counts.get(key, 0)
        # longer than the indexed orders: direct scan
        n = len(key)
        total = 0
        for sent in self.sentences:
            for i in range(len(sent) - n + 1):
                if tuple(sent[i : i + n]) == key:
                    total += 1
        return total

    def cohesion(self, key: TokenKey) -> float:
        """min over binary splits of ln(count(g) * T / (count(left) * count(right)))."""
        count = self.count_of(key)
        if count == 0:
            return 0.0
        best = math.inf
        for split in range(1, len(key)):
            left = self.count_of(key[:split])
            right = self.count_of(key[split:])
            score = math.log(count * self.total_tokens / (left * right))
            best = min(best, score)
        return best

    def boundary_entropy(self, key: TokenKey) -> float:
        """min of left/right neighbor entropy (nats) over all occurrences."""
        return self.boundary_entropies([key])[key]

    def boundary_entropies(
        self, keys: Iterable[TokenKey]
    ) -> dict[TokenKey, float]:
        """Batched form: one corpus pass collects neighbors for all keys."""
        wanted = set(keys)
        lengths = sorted({len(k) for k in wanted})
        left: dict[TokenKey, dict] = {k: {} for k in wanted}
        right: dict[TokenKey, dict] = {k: {} for k in wanted}
        for sent in self.sentences:
            for n in lengths:
                for i in range(len(sent) - n + 1):
                    key = tuple(sent[i : i + n])
                    if key not in left:
                        continue
                    lsym = sent[i - 1] if i > 0 else _EDGE
                    rsym = sent[i + n] if i + n < len(sent) else _EDGE
                    left[key][lsym] = left[key].get(lsym, 0) + 1
                    right[key][rsym] = right[key].get(rsym, 0) + 1
        return {
            k: min(_entropy(left[k]), _entropy(right[k])) for k in wanted
        }


def _entropy(counts: dict) -> float:
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return math.log(total) - sum(c * math.log(c) for c in counts.values()) / total


def mine_candidates(
    docs: list[Document], min_count: int = 5, max_n: int = 4
) -> list[PhraseCandidate]:
    """Emit every qualifying n-gram with features, sorted by
    (descending count, lexicographic tokens)."""
    if min_count < 2:
        raise ValueError("min_count must be >= 2")
    if not 2 <= max_n <= 6:
        raise ValueError("max_n must be in 2..6")
    stats = CorpusStats.from_documents(docs, max_n)
    keys = [
        key
        for key, count in stats.counts.items()
        if len(key) >= 2 and count >= min_count
    ]
    entropies = stats.boundary_entropies(keys)
    candidates = [
        PhraseCandidate(
            tokens=key,
            count=stats.counts[key],
            cohesion=stats.cohesion(key),
            boundary_entropy=entropies[key],
        )
        for key in keys
    ]
    candidates.sort(key=lambda c: (-c.count, c.tokens))
    return candidates


def merge_external(
    candidates: list[PhraseCandidate],
    extra_phrases: Iterable[Sequence[str]],
    stats: CorpusStats | None = None,
) -> list[PhraseCandidate]:
    """Union mined candidates with an external phrase list.

    Phrases already mined keep their mined entry.  New phrases get
    corpus-computed features when `stats` is given and the phrase occurs
    in the corpus; otherwise zeroed features.  Either way they carry the
    external flag.  Result is re-sorted into the canonical candidate order.
    """
    merged = {c.tokens: c for c in candidates}
    for phrase in extra_phrases:
        key = tuple(phrase)
        if not key or key in merged:
            continue
        count = stats.count_of(key) if stats is not None else 0
        if count > 0:
            entry = PhraseCandidate(
                tokens=key,
                count=count,
                cohesion=stats.cohesion(key),
                boundary_entropy=stats.boundary_entropy(key),
                external=True,
            )
        else:
            entry = PhraseCandidate(key, 0, 0.0, 0.0, external=True)
        merged[key] = entry
    out = list(merged.values())
    out.sort(key=lambda c: (-c.count, c.tokens))
    return out


def load_phrase_list(path: str) -> list[TokenKey]:
    """Plain-text phrase file: one phrase per line, tokenized on load."""
    with open(path, "rb") as f:
        data = f.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    keys = []
    for line in text.split("\n"):
        key = tuple(token_texts(line))
        if key:
            keys.append(key)
    return keys


def write_candidates(path: str, candidates: list[PhraseCandidate]) -> None:
    """Candidate TSV: tokens joined by spaces, count, cohesion,
    boundary_entropy (both %.9f), external flag, and quality when set."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        for c in candidates:
            row = (
                f"{' '.join(c.tokens)}\t{c.count}\t{c.cohesion:.9f}"
                f"\t{c.boundary_entropy:.9f}\t{int(c.external)}"
            )
            if c.quality is not None:
                row += f"\t{c.quality:.9f}"
            f.write(row + "\n")


def read_candidates(path: str) -> list[PhraseCandidate]:
    candidates = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) not in (5, 6):
                raise InputFormatError(
                    f"{path}: line {line_no}: expected 5 or 6 columns, got {len(cols)}"
                )
            try:
                candidates.append(
                    PhraseCandidate(
                        tokens=tuple(cols[0].split(" ")),
                        count=int(cols[1]),
                        cohesion=float(cols[2]),
                        boundary_entropy=float(cols[3]),
                        external=bool(int(cols[4])),
                        quality=float(cols[5]) if len(cols) == 6 else None,
                    )
                )
            except ValueError as exc:
                raise InputFormatError(f"{path}: line {line_no}: {exc}") from None
    return candidates
