"""Character-level tokenization and vocabulary handling.

Tokenization rule, applied to Unicode scalar values:
  * any Unicode whitespace separates tokens and is dropped,
  * a maximal run of ASCII letters/digits becomes one token, lowercased,
  * every other non-whitespace character becomes a single-character token.

No Unicode normalization is applied; input code points are authoritative.
This keeps the tokenizer a pure function so entity surface forms tokenize
identically everywhere they appear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import InputFormatError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)


@dataclass(frozen=True)
class Token:
    """A token plus its source span (Unicode offsets, half-open)."""

    text: str
    char_start: int
    char_end: int


def _is_ascii_alnum(ch: str) -> bool:
    return ("0" <= ch <= "9") or ("a" <= ch <= "z") or ("A" <= ch <= "Z")


def tokenize(sentence: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    n = len(sentence)
    while i < n:
        ch = sentence[i]
        if ch.isspace():
            i += 1
            continue
        if _is_ascii_alnum(ch):
            j = i + 1
            while j < n and _is_ascii_alnum(sentence[j]):
                j += 1
            tokens.append(Token(sentence[i:j].lower(), i, j))
            i = j
        else:
            tokens.append(Token(ch, i, i + 1))
            i += 1
    return tokens


def token_texts(sentence: str) -> list[str]:
    return [t.text for t in tokenize(sentence)]


class Vocabulary:
    """Immutable token-to-id mapping; ids are line numbers in the file form.

    Ids 0..4 are always [PAD], [UNK], [CLS], [SEP], [MASK] in that order.
    """

    def __init__(self, tokens: list[str]):
        if list(tokens[:5]) != list(SPECIALS):
            raise InputFormatError(
                "vocabulary must start with the five specials "
                + " ".join(SPECIALS)
            )
        self._tokens = list(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}
        if len(self._ids) != len(self._tokens):
            raise InputFormatError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self._tokens[token_id]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("\n".join(self._tokens))
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "rb") as f:
            data = f.read()
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InputFormatError(
                f"{path}: invalid UTF-8 at byte {exc.start}"
            ) from exc
        if text.endswith("\n"):
            text = text[:-1]
        lines = text.split("\n")
        if "" in lines:
            raise InputFormatError(f"{path}: blank line in vocabulary")
        return cls(lines)


def ids_of(tokens: Iterable[Token | str], vocab: Vocabulary) -> list[int]:
    """Map tokens (or raw token strings) to ids; unknowns become [UNK]."""
    out = []
    for tok in tokens:
        text = tok.text if isinstance(tok, Token) else tok
        out.append(vocab.id_of(text))
    return out


def build_vocab(token_stream: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Count tokens and keep those with frequency >= min_count.

    Order after the specials: descending frequency, ties broken by the
    token string, so the result is a total deterministic order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: dict[str, int] = {}
    for text in token_stream:
        counts[text] = counts.get(text, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + kept)
