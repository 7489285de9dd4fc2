"""Corpus reading, work-list shuffling, and example serialization.

Corpus format: UTF-8 text, one sentence per line, documents separated by
one or more blank lines.  Examples are JSON lines with a fixed key order
so that writing is a pure function of the records (bit-exact diffs work).
Paths ending in ".gz" are transparently gzip-compressed.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from typing import IO, Iterable

from .errors import InputFormatError
from .rng import Stream

# Wire encoding of per-position masking actions.
ACTION_MASK = 0
ACTION_REPLACE = 1
ACTION_KEEP = 2

EXAMPLE_KEYS = (
    "doc_id",
    "dupe_index",
    "example_index",
    "input_ids",
    "segment_ids",
    "masked_positions",
    "masked_label_ids",
    "actions",
    "nsp_label",
)
_INT_KEYS = ("doc_id", "dupe_index", "example_index", "nsp_label")
_LIST_KEYS = tuple(k for k in EXAMPLE_KEYS if k not in _INT_KEYS)

# Work-list shuffling draws from its own stream domain so it can never
# collide with the per-example streams.
_WORKLIST_TAG = 1


@dataclass
class Document:
    doc_id: int
    sentences: list[str]


@dataclass
class PretrainExample:
    """One serialized training record over a packed [CLS] A [SEP] B [SEP]."""

    doc_id: int
    dupe_index: int
    example_index: int
    input_ids: list[int]
    segment_ids: list[int]
    masked_positions: list[int]
    masked_label_ids: list[int]
    actions: list[int]
    nsp_label: int

    def to_dict(self) -> dict:
        return {key: getattr(self, key) for key in EXAMPLE_KEYS}


def _open_text(path: str, mode: str) -> IO[str]:
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _read_bytes(path: str) -> bytes:
    if path.endswith(".gz"):
        with gzip.open(path, "rb") as f:
            return f.read()
    with open(path, "rb") as f:
        return f.read()


def read_corpus(path: str) -> list[Document]:
    data = _read_bytes(path)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    docs: list[Document] = []
    current: list[str] = []
    for raw_line in text.split("\n"):
        line = raw_line.rstrip()
        if line:
            current.append(line)
        elif current:
            docs.append(Document(len(docs), current))
            current = []
    if current:
        docs.append(Document(len(docs), current))
    return docs


def duplicate_and_shuffle(
    docs: list[Document], dupe_factor: int = 10, seed: int = 0
) -> list[tuple[int, int]]:
    """Seeded permutation of the (doc_id, dupe_index) cross product."""
    if dupe_factor < 1:
        raise ValueError("dupe_factor must be >= 1")
    work = [(doc.doc_id, dupe) for doc in docs for dupe in range(dupe_factor)]
    Stream(seed, _WORKLIST_TAG).shuffle(work)
    return work


def write_examples(path: str, records: Iterable[PretrainExample]) -> None:
    with _open_text(path, "w") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), separators=(",", ":")))
            f.write("\n")


def _require_int(value, line_no: int, key: str) -> int:
    if type(value) is not int:
        raise InputFormatError(f"line {line_no}: field {key!r} must be an integer")
    return value


def _require_int_list(value, line_no: int, key: str) -> list[int]:
    if not isinstance(value, list) or any(type(v) is not int for v in value):
        raise InputFormatError(f"line {line_no}: field {key!r} must be a list of integers")
    return value


def read_examples(path: str) -> list[PretrainExample]:
    records: list[PretrainExample] = []
    with _open_text(path, "r") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                records.append(_parse_record(line, line_no))
            except InputFormatError as exc:
                raise InputFormatError(f"{path}: {exc}") from None
    return records


def _parse_record(line: str, line_no: int) -> PretrainExample:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"line {line_no}: invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise InputFormatError(f"line {line_no}: record must be a JSON object")
    for key in EXAMPLE_KEYS:
        if key not in obj:
            raise InputFormatError(f"line {line_no}: missing field {key!r}")
    for key in obj:
        if key not in EXAMPLE_KEYS:
            raise InputFormatError(f"line {line_no}: unknown field {key!r}")
    kwargs = {k: _require_int(obj[k], line_no, k) for k in _INT_KEYS}
    kwargs.update({k: _require_int_list(obj[k], line_no, k) for k in _LIST_KEYS})
    record = PretrainExample(**kwargs)
    _validate_record(record, line_no)
    return record


def _validate_record(rec: PretrainExample, line_no: int) -> None:
    if rec.nsp_label not in (0, 1):
        raise InputFormatError(f"line {line_no}: field 'nsp_label' must be 0 or 1")
    if len(rec.segment_ids) != len(rec.input_ids):
        raise InputFormatError(
            f"line {line_no}: field 'segment_ids' length differs from 'input_ids'"
        )
    n = len(rec.masked_positions)
    if len(rec.masked_label_ids) != n:
        raise InputFormatError(
            f"line {line_no}: field 'masked_label_ids' length differs from "
            "'masked_positions'"
        )
    if len(rec.actions) != n:
        raise InputFormatError(
            f"line {line_no}: field 'actions' length differs from 'masked_positions'"
        )
    if any(a not in (ACTION_MASK, ACTION_REPLACE, ACTION_KEEP) for a in rec.actions):
        raise InputFormatError(f"line {line_no}: field 'actions' has values outside 0..2")
    if any(
        b <= a for a, b in zip(rec.masked_positions, rec.masked_positions[1:])
    ):
        raise InputFormatError(
            f"line {line_no}: field 'masked_positions' must be strictly increasing"
        )
    if any(p < 0 or p >= len(rec.input_ids) for p in rec.masked_positions):
        raise InputFormatError(
            f"line {line_no}: field 'masked_positions' out of range"
        )
