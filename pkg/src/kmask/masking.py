"""Masking unit annotation, selection, and example assembly.

Each packed sentence pair [CLS] A [SEP] B [SEP] is partitioned into
masking units with coarse-to-fine precedence: dictionary entities first,
then mined phrases in the gaps (both leftmost-longest), then singleton
characters.  Units are selected under a 15% token budget and masked
atomically; the selected unit draws one action (80% mask / 10% random
replace / 10% keep) applied to all of its tokens.

All randomness comes from a stream keyed by (seed, doc_id, dupe_index,
example_index), so the generated records are identical no matter how the
work is scheduled or how many workers run.
"""

from __future__ import annotations

import math
import multiprocessing
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

from .corpus import (
    ACTION_KEEP,
    ACTION_MASK,
    ACTION_REPLACE,
    Document,
    PretrainExample,
    duplicate_and_shuffle,
)
from .errors import UsageError
from .lexicon import EntityLexicon, EntityMatch
from .matcher import TokenMatcher, build_matcher
from .rng import Stream
from .tokenizer import CLS_ID, SEP_ID, MASK_ID, Vocabulary, token_texts

UNIT_ENTITY = "entity"
UNIT_SPAN = "span"
UNIT_CHAR = "char"

_EXAMPLE_TAG = 4

_FIRST_REGULAR_ID = 5  # ids 0..4 are the specials


@dataclass(frozen=True)
class MaskingUnit:
    token_start: int
    token_end: int
    kind: str

    def __len__(self) -> int:
        return self.token_end - self.token_start


@dataclass(frozen=True)
class SelectedUnit:
    unit: MaskingUnit
    action: int
    replacement_ids: tuple[int, ...] | None = None  # only for ACTION_REPLACE


@dataclass
class MaskingPlan:
    selected: list[SelectedUnit]

    def masked_token_count(self) -> int:
        return sum(len(s.unit) for s in self.selected)


@dataclass
class PackedPair:
    """Truncated segment token texts plus the NSP label."""

    tokens_a: list[str]
    tokens_b: list[str]
    nsp_label: int

    @property
    def maskable(self) -> int:
        return len(self.tokens_a) + len(self.tokens_b)


@dataclass
class GenerationConfig:
    dupe_factor: int = 10
    mask_rate: float = 0.15
    max_seq_len: int = 512
    min_seq_len: int = 0
    seed: int = 0
    workers: int = 1

    def validate(self) -> None:
        if not 0.0 < self.mask_rate < 1.0:
            raise UsageError("mask_rate must be strictly between 0 and 1")
        if self.dupe_factor < 1:
            raise UsageError("dupe_factor must be >= 1")
        if self.max_seq_len < 8:
            raise UsageError("max_seq_len must be >= 8")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")


def annotate_units(
    tokens: Sequence[str],
    entity_matches: Sequence[EntityMatch],
    phrase_matcher: TokenMatcher | None = None,
) -> list[MaskingUnit]:
    """Partition one segment into entity > span > char units.

    Entity matches claim their spans outright; in the remaining gaps the
    phrase matcher runs leftmost-longest; whatever stays uncovered becomes
    singleton char units.  Indices are relative to `tokens`.
    """
    units: list[MaskingUnit] = []
    cursor = 0
    for match in entity_matches:
        units.extend(_gap_units(tokens, cursor, match.token_start, phrase_matcher))
        units.append(MaskingUnit(match.token_start, match.token_end, UNIT_ENTITY))
        cursor = match.token_end
    units.extend(_gap_units(tokens, cursor, len(tokens), phrase_matcher))
    return units


def _gap_units(
    tokens: Sequence[str],
    start: int,
    end: int,
    phrase_matcher: TokenMatcher | None,
) -> list[MaskingUnit]:
    if start >= end:
        return []
    if phrase_matcher is None:
        return [MaskingUnit(i, i + 1, UNIT_CHAR) for i in range(start, end)]
    units: list[MaskingUnit] = []
    cursor = start
    for s, e, _ in phrase_matcher.leftmost_longest(tokens[start:end]):
        for i in range(cursor, start + s):
            units.append(MaskingUnit(i, i + 1, UNIT_CHAR))
        units.append(MaskingUnit(start + s, start + e, UNIT_SPAN))
        cursor = start + e
    for i in range(cursor, end):
        units.append(MaskingUnit(i, i + 1, UNIT_CHAR))
    return units


def truncate_pair_lengths(len_a: int, len_b: int, max_tokens: int) -> tuple[int, int]:
    """Token counts after trimming the pair to fit.

    Drops one token at a time from the end of the longer segment (ties
    trim the first segment), which alternates once the lengths meet.
    """
    while len_a + len_b > max_tokens:
        if len_a >= len_b:
            len_a -= 1
        else:
            len_b -= 1
    return len_a, len_b


def pack_pair(
    tokens_a: Sequence[str],
    tokens_b: Sequence[str],
    nsp_label: int,
    max_seq_len: int,
) -> PackedPair:
    la, lb = truncate_pair_lengths(len(tokens_a), len(tokens_b), max_seq_len - 3)
    return PackedPair(list(tokens_a[:la]), list(tokens_b[:lb]), nsp_label)


def select_and_apply(
    units: Sequence[MaskingUnit],
    stream: Stream,
    vocab_size: int,
    budget_rate: float = 0.15,
) -> MaskingPlan:
    """Visit units in a seeded random permutation and select under the
    budget ceil(rate * maskable); the first visited unit is always taken
    so every example gets at least one prediction target.  Each selected
    unit draws one action applied to all of its tokens."""
    if not units:
        raise ValueError("select_and_apply requires at least one unit")
    maskable = sum(len(u) for u in units)
    budget = math.ceil(budget_rate * maskable)
    order = list(units)
    stream.shuffle(order)
    selected: list[SelectedUnit] = []
    used = 0
    for unit in order:
        if selected and used + len(unit) > budget:
            continue
        used += len(unit)
        roll = stream.random()
        if roll < 0.8:
            selected.append(SelectedUnit(unit, ACTION_MASK))
        elif roll < 0.9:
            replacements = tuple(
                _FIRST_REGULAR_ID + stream.randbelow(vocab_size - _FIRST_REGULAR_ID)
                for _ in range(len(unit))
            )
            selected.append(SelectedUnit(unit, ACTION_REPLACE, replacements))
        else:
            selected.append(SelectedUnit(unit, ACTION_KEEP))
    selected.sort(key=lambda s: s.unit.token_start)
    return MaskingPlan(selected)


def emit_example(
    packed: PackedPair,
    plan: MaskingPlan,
    vocab: Vocabulary,
    doc_id: int,
    dupe_index: int,
    example_index: int,
) -> PretrainExample:
    if not plan.selected:
        raise AssertionError("masking plan is empty; >=1 unit must be selected")
    ids_a = [vocab.id_of(t) for t in packed.tokens_a]
    ids_b = [vocab.id_of(t) for t in packed.tokens_b]
    original = [CLS_ID] + ids_a + [SEP_ID] + ids_b + [SEP_ID]
    segment_ids = [0] * (len(ids_a) + 2) + [1] * (len(ids_b) + 1)
    input_ids = list(original)
    masked_positions: list[int] = []
    masked_label_ids: list[int] = []
    actions: list[int] = []
    for sel in plan.selected:
        for offset, pos in enumerate(range(sel.unit.token_start, sel.unit.token_end)):
            masked_positions.append(pos)
            masked_label_ids.append(original[pos])
            actions.append(sel.action)
            if sel.action == ACTION_MASK:
                input_ids[pos] = MASK_ID
            elif sel.action == ACTION_REPLACE:
                input_ids[pos] = sel.replacement_ids[offset]
    return PretrainExample(
        doc_id=doc_id,
        dupe_index=dupe_index,
        example_index=example_index,
        input_ids=input_ids,
        segment_ids=segment_ids,
        masked_positions=masked_positions,
        masked_label_ids=masked_label_ids,
        actions=actions,
        nsp_label=packed.nsp_label,
    )


@dataclass
class _Context:
    """Everything a worker needs; immutable once generation starts."""

    doc_ids: list[int]  # corpus order; need not be contiguous
    doc_tokens: dict[int, list[list[str]]]  # doc_id -> per-sentence token texts
    doc_offsets: list[int]  # start of each doc's block in flat sentence order
    doc_position: dict[int, int]  # doc_id -> index into doc_ids/doc_offsets
    total_sentences: int
    vocab: Vocabulary
    entity_matcher: TokenMatcher | None
    phrase_matcher: TokenMatcher | None
    config: GenerationConfig

    @classmethod
    def build(
        cls,
        docs: list[Document],
        lexicon: EntityLexicon | None,
        phrase_keys: Sequence[Sequence[str]],
        vocab: Vocabulary,
        config: GenerationConfig,
    ) -> "_Context":
        doc_ids = [doc.doc_id for doc in docs]
        if len(set(doc_ids)) != len(doc_ids):
            raise ValueError("duplicate doc_id in corpus")
        doc_tokens = {
            doc.doc_id: [token_texts(s) for s in doc.sentences] for doc in docs
        }
        offsets, running = [], 0
        for doc_id in doc_ids:
            offsets.append(running)
            running += len(doc_tokens[doc_id])
        entity_matcher = (
            lexicon.matcher() if lexicon is not None and len(lexicon) else None
        )
        phrase_matcher = build_matcher(phrase_keys) if phrase_keys else None
        return cls(
            doc_ids=doc_ids,
            doc_tokens=doc_tokens,
            doc_offsets=offsets,
            doc_position={d: i for i, d in enumerate(doc_ids)},
            total_sentences=running,
            vocab=vocab,
            entity_matcher=entity_matcher,
            phrase_matcher=phrase_matcher,
            config=config,
        )


def _pick_other_sentence(
    ctx: _Context, stream: Stream, current_doc: int
) -> tuple[int, int] | None:
    """Uniform draw over all sentences that live in a different document."""
    own = len(ctx.doc_tokens[current_doc])
    pool = ctx.total_sentences - own
    if pool <= 0:
        return None
    k = stream.randbelow(pool)
    if k >= ctx.doc_offsets[ctx.doc_position[current_doc]]:
        k += own
    position = bisect_right(ctx.doc_offsets, k) - 1
    return ctx.doc_ids[position], k - ctx.doc_offsets[position]


def _segment_units(ctx: _Context, tokens: list[str]) -> list[MaskingUnit]:
    if ctx.entity_matcher is None and ctx.phrase_matcher is None:
        return [MaskingUnit(i, i + 1, UNIT_CHAR) for i in range(len(tokens))]
    if ctx.entity_matcher is None:
        matches: list[EntityMatch] = []
    else:
        matches = [
            EntityMatch(s, e, payload)
            for s, e, payload in ctx.entity_matcher.leftmost_longest(tokens)
        ]
    return annotate_units(tokens, matches, ctx.phrase_matcher)


def _examples_for_work_item(
    ctx: _Context, doc_id: int, dupe_index: int
) -> list[PretrainExample]:
    sents = ctx.doc_tokens[doc_id]
    cfg = ctx.config
    out: list[PretrainExample] = []
    # One example per sentence that has a successor; a single-sentence
    # document contributes one forced-negative example.
    pair_count = max(len(sents) - 1, 1)
    for example_index in range(pair_count):
        stream = Stream(cfg.seed, _EXAMPLE_TAG, doc_id, dupe_index, example_index)
        has_next = example_index + 1 < len(sents)
        is_next = stream.coin() if has_next else False
        if is_next:
            tokens_b = sents[example_index + 1]
            nsp_label = 1
        else:
            pick = _pick_other_sentence(ctx, stream, doc_id)
            if pick is None:
                if not has_next:
                    continue  # lone sentence in a lone document: no pair possible
                # single-document corpus: negatives are impossible
                tokens_b = sents[example_index + 1]
                nsp_label = 1
            else:
                tokens_b = ctx.doc_tokens[pick[0]][pick[1]]
                nsp_label = 0
        packed = pack_pair(sents[example_index], tokens_b, nsp_label, cfg.max_seq_len)
        if len(packed.tokens_a) + len(packed.tokens_b) + 3 < cfg.min_seq_len:
            continue
        units_a = _segment_units(ctx, packed.tokens_a)
        units_b = _segment_units(ctx, packed.tokens_b)
        offset_b = 2 + len(packed.tokens_a)
        units = [
            MaskingUnit(u.token_start + 1, u.token_end + 1, u.kind) for u in units_a
        ] + [
            MaskingUnit(u.token_start + offset_b, u.token_end + offset_b, u.kind)
            for u in units_b
        ]
        plan = select_and_apply(units, stream, len(ctx.vocab), cfg.mask_rate)
        out.append(
            emit_example(packed, plan, ctx.vocab, doc_id, dupe_index, example_index)
        )
    return out


_WORKER_CTX: _Context | None = None


def _init_worker(ctx: _Context) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _run_work_item(item: tuple[int, int]) -> list[PretrainExample]:
    return _examples_for_work_item(_WORKER_CTX, item[0], item[1])


def generate_examples(
    docs: list[Document],
    lexicon: EntityLexicon | None,
    phrase_keys: Sequence[Sequence[str]],
    vocab: Vocabulary,
    config: GenerationConfig,
) -> list[PretrainExample]:
    """Run the full masking pipeline over the corpus.

    Output is sorted by (doc_id, dupe_index, example_index) and is
    byte-for-byte independent of the worker count.
    """
    config.validate()
    if len(vocab) <= _FIRST_REGULAR_ID:
        raise UsageError("vocabulary has no regular tokens beyond the specials")
    ctx = _Context.build(docs, lexicon, phrase_keys, vocab, config)
    work = duplicate_and_shuffle(docs, config.dupe_factor, config.seed)
    if config.workers == 1:
        chunks = [_examples_for_work_item(ctx, d, u) for d, u in work]
    else:
        with multiprocessing.Pool(
            processes=config.workers, initializer=_init_worker, initargs=(ctx,)
        ) as pool:
            chunks = pool.map(_run_work_item, work, chunksize=32)
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (r.doc_id, r.dupe_index, r.example_index))
    return records
