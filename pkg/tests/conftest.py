"""Shared synthetic-corpus builders.

Tests generate Chinese-like text from a fixed hanzi pool through the
package's own deterministic Stream, so every test input is reproducible
from its seed.
"""

from pathlib import Path

from kmask.corpus import Document
from kmask.rng import Stream

DATA_DIR = Path(__file__).resolve().parents[1] / "data"

# (number, "[PASS/FAIL] criterion N: ...") lines pushed by the acceptance
# tests; echoed after the run so they survive output capture.
ACCEPTANCE_VERDICTS: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_VERDICTS):
            terminalreporter.write_line(line)

# Frequent hanzi; enough symbols that random n-grams rarely repeat by
# accident, few enough that they often do when we want collisions.
HANZI = (
    "的一是在不了有和人这中大为上个国我以要他时来用们生到作地于出就分对成"
    "会可主发年动同工也能下过子说产种面而方后多定行学法所民得经十三之进着"
)


def random_sentence(stream: Stream, length: int, pool: str = HANZI) -> str:
    return "".join(stream.choice(pool) for _ in range(length))


def random_docs(
    seed: int,
    n_docs: int,
    sentences_per_doc: tuple[int, int] = (2, 4),
    sentence_len: tuple[int, int] = (8, 30),
    pool: str = HANZI,
) -> list[Document]:
    stream = Stream(seed, 900)
    lo_s, hi_s = sentences_per_doc
    lo_l, hi_l = sentence_len
    docs = []
    for doc_id in range(n_docs):
        count = lo_s + stream.randbelow(hi_s - lo_s + 1)
        sents = [
            random_sentence(stream, lo_l + stream.randbelow(hi_l - lo_l + 1), pool)
            for _ in range(count)
        ]
        docs.append(Document(doc_id, sents))
    return docs


def planted_docs(
    seed: int,
    n_docs: int,
    terms: list[str],
    sentences_per_doc: tuple[int, int] = (2, 3),
    parts_per_sentence: tuple[int, int] = (5, 10),
    plant_one_in: int = 3,
    pool: str = HANZI,
) -> list[Document]:
    """Random sentences with dictionary terms spliced in, so matcher-based
    tests have something to find."""
    stream = Stream(seed, 901)
    lo_s, hi_s = sentences_per_doc
    lo_p, hi_p = parts_per_sentence
    docs = []
    for doc_id in range(n_docs):
        sents = []
        for _ in range(lo_s + stream.randbelow(hi_s - lo_s + 1)):
            pieces = []
            for _ in range(lo_p + stream.randbelow(hi_p - lo_p + 1)):
                if terms and stream.randbelow(plant_one_in) == 0:
                    pieces.append(terms[stream.randbelow(len(terms))])
                else:
                    pieces.append(stream.choice(pool))
            sents.append("".join(pieces))
        docs.append(Document(doc_id, sents))
    return docs
