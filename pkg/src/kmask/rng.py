"""Deterministic counter-based random streams.

Every random decision in the pipeline draws from a `Stream` keyed by
integers such as (seed, doc_id, dupe_index, example_index).  Streams are
pure functions of their key: the same key yields the same draws on every
run, platform, and Python version, which is what makes example generation
independent of worker scheduling.

The generator is splitmix64 (Steele et al.), a counter-based design: the
state advances by a fixed odd constant and each output is a finalizing
mix of the state.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

T = TypeVar("T")


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Stream:
    """splitmix64 stream whose initial state is a mix of the key integers."""

    __slots__ = ("_state",)

    def __init__(self, *key: int):
        state = 0
        for k in key:
            state = _mix64((state + _GAMMA + (k & _MASK64)) & _MASK64)
        self._state = state

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix64(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow() requires n >= 1")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def coin(self) -> bool:
        return bool(self.next_u64() & 1)

    def choice(self, seq: Sequence[T]) -> T:
        return seq[self.randbelow(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
