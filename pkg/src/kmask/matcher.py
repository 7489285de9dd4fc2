"""Multi-pattern matching over token sequences.

Aho-Corasick automaton whose alphabet is token strings.  One pass over a
sentence finds every dictionary occurrence; greedy leftmost-longest
selection then yields the non-overlapping annotation used for both entity
matching and phrase matching.
"""

from __future__ import annotations

from collections import deque
from typing import Any, Hashable, Iterable, Sequence

TokenKey = tuple[str, ...]


class TokenMatcher:
    """Token-level Aho-Corasick with per-pattern payloads."""

    def __init__(self, patterns: Iterable[tuple[Sequence[str], Any]]):
        # goto: per-state dict symbol -> state; state 0 is the root
        self._goto: list[dict[str, int]] = [{}]
        self._fail: list[int] = [0]
        # outputs: per-state list of (pattern_length, payload)
        self._out: list[list[tuple[int, Any]]] = [[]]
        for pattern, payload in patterns:
            self._insert(tuple(pattern), payload)
        self._build_failure_links()

    def _insert(self, pattern: TokenKey, payload: Any) -> None:
        if not pattern:
            raise ValueError("empty pattern")
        state = 0
        for symbol in pattern:
            nxt = self._goto[state].get(symbol)
            if nxt is None:
                nxt = len(self._goto)
                self._goto[state][symbol] = nxt
                self._goto.append({})
                self._fail.append(0)
                self._out.append([])
            state = nxt
        self._out[state].append((len(pattern), payload))

    def _build_failure_links(self) -> None:
        queue: deque[int] = deque()
        for state in self._goto[0].values():
            self._fail[state] = 0
            queue.append(state)
        while queue:
            state = queue.popleft()
            for symbol, nxt in self._goto[state].items():
                queue.append(nxt)
                fall = self._fail[state]
                while fall and symbol not in self._goto[fall]:
                    fall = self._fail[fall]
                self._fail[nxt] = self._goto[fall].get(symbol, 0)
                # merge outputs reachable through the failure chain
                self._out[nxt] = self._out[nxt] + self._out[self._fail[nxt]]

    def find_all(self, tokens: Sequence[str]) -> list[tuple[int, int, Any]]:
        """All occurrences as (start, end, payload), sorted by (start, -len)."""
        hits: list[tuple[int, int, Any]] = []
        state = 0
        for i, symbol in enumerate(tokens):
            while state and symbol not in self._goto[state]:
                state = self._fail[state]
            state = self._goto[state].get(symbol, 0)
            for length, payload in self._out[state]:
                hits.append((i + 1 - length, i + 1, payload))
        hits.sort(key=lambda h: (h[0], -(h[1] - h[0])))
        return hits

    def leftmost_longest(self, tokens: Sequence[str]) -> list[tuple[int, int, Any]]:
        """Greedy scan: at each position take the longest pattern starting
        there, then resume after its end.  Output is non-overlapping."""
        selected: list[tuple[int, int, Any]] = []
        pos = 0
        for start, end, payload in self.find_all(tokens):
            if start < pos:
                continue
            # hits at one start are ordered longest first, so the first
            # hit at or past `pos` is the greedy choice there; any hit
            # with start > pos means no pattern started earlier.
            selected.append((start, end, payload))
            pos = end
        return selected


def build_matcher(keys: Iterable[Sequence[str]], payload: Hashable = None) -> TokenMatcher:
    """Matcher over bare token sequences with one shared payload."""
    return TokenMatcher((key, payload) for key in keys)
