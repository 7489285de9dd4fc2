import math
from collections import Counter

import pytest

from kmask.corpus import Document
from kmask.errors import InputFormatError
from kmask.phrases import (
    CorpusStats,
    PhraseCandidate,
    load_phrase_list,
    merge_external,
    mine_candidates,
    read_candidates,
    write_candidates,
)
from kmask.rng import Stream

from conftest import random_docs


def _exhaustive_counts(docs, max_n):
    counts = Counter()
    for doc in docs:
        for sentence in doc.sentences:
            tokens = list(sentence)
            for n in range(1, max_n + 1):
                for i in range(len(tokens) - n + 1):
                    counts[tuple(tokens[i : i + n])] += 1
    return counts


def test_counts_match_exhaustive_enumeration():
    docs = [Document(0, ["甲乙甲乙甲", "乙甲乙"]), Document(1, ["甲甲甲"])]
    stats = CorpusStats.from_documents(docs, max_n=3)
    expected = _exhaustive_counts(docs, 3)
    assert stats.counts == dict(expected)
    assert stats.total_tokens == 11


def test_counts_do_not_cross_sentence_boundaries():
    stats = CorpusStats.from_documents([Document(0, ["甲乙", "丙丁"])], max_n=2)
    assert ("乙", "丙") not in stats.counts
    assert stats.counts[("甲", "乙")] == 1


def test_count_of_scans_beyond_indexed_orders():
    stats = CorpusStats([list("abcabc")], max_n=2)
    assert stats.count_of(tuple("abc")) == 2
    assert stats.count_of(tuple("abca")) == 1
    assert stats.count_of(tuple("zzz")) == 0


def test_bigram_cohesion_is_pmi_in_nats():
    # corpus: 甲乙 together 3 times, 甲 alone once, 乙 alone once; T = 8
    stats = CorpusStats([list("甲乙甲乙甲乙"), ["甲"], ["乙"]], max_n=2)
    count_ab, count_a, count_b = 3, 4, 4
    expected = math.log(count_ab * 8 / (count_a * count_b))
    assert stats.cohesion(("甲", "乙")) == pytest.approx(expected, abs=1e-12)


def test_cohesion_takes_the_weakest_split():
    # "abc": split a|bc vs ab|c with very different denominators
    sents = [list("abc")] * 3 + [list("ab")] * 7 + [list("bc")] + [["a"]] * 2
    stats = CorpusStats(sents, max_n=3)
    splits = []
    for cut in (1, 2):
        left = stats.count_of(tuple("abc")[:cut])
        right = stats.count_of(tuple("abc")[cut:])
        splits.append(math.log(3 * stats.total_tokens / (left * right)))
    assert stats.cohesion(tuple("abc")) == pytest.approx(min(splits), abs=1e-12)
    assert stats.cohesion(tuple("zz")) == 0.0


def test_boundary_entropy_zero_when_context_is_constant():
    # 乙丙 always preceded by 甲 and followed by 丁
    stats = CorpusStats([list("甲乙丙丁")] * 5, max_n=2)
    assert stats.boundary_entropy(("乙", "丙")) == 0.0


def test_boundary_entropy_counts_sentence_edges():
    # left neighbors of 甲乙: edge, edge, 戊 -> entropy of {2, 1};
    # right neighbors: 丙, 丁, edge -> ln 3.  The minimum only comes out
    # to the left value if sentence edges are counted as a symbol.
    sents = [list("甲乙丙"), list("甲乙丁"), list("戊甲乙")]
    stats = CorpusStats(sents, max_n=2)
    left = math.log(3) - (2 * math.log(2) + 1 * math.log(1)) / 3
    assert stats.boundary_entropy(("甲", "乙")) == pytest.approx(left, abs=1e-12)
    # a candidate pinned to the sentence start has zero left entropy
    pinned = CorpusStats([list("甲乙丙"), list("甲乙丁"), list("甲乙戊")], max_n=2)
    assert pinned.boundary_entropy(("甲", "乙")) == pytest.approx(0.0, abs=1e-12)


def test_batched_entropies_match_single_queries():
    docs = random_docs(31, 20, sentences_per_doc=(1, 3), sentence_len=(5, 15))
    stats = CorpusStats.from_documents(docs, max_n=3)
    keys = [k for k in stats.counts if len(k) >= 2][:50]
    batched = stats.boundary_entropies(keys)
    for key in keys:
        assert batched[key] == stats.boundary_entropy(key)


def test_mine_candidates_thresholds_and_order():
    docs = [Document(0, ["甲乙丙甲乙", "甲乙丁"])]
    candidates = mine_candidates(docs, min_count=2, max_n=3)
    assert [(c.tokens, c.count) for c in candidates] == [(("甲", "乙"), 3)]
    got = candidates[0]
    stats = CorpusStats.from_documents(docs, 3)
    assert got.cohesion == pytest.approx(stats.cohesion(("甲", "乙")))
    assert got.boundary_entropy == pytest.approx(stats.boundary_entropy(("甲", "乙")))
    assert not got.external and got.quality is None


def test_mine_candidates_sorts_by_count_then_tokens():
    docs = [Document(0, ["乙丁乙丁", "甲丙甲丙", "甲丙"])]
    candidates = mine_candidates(docs, min_count=2, max_n=2)
    assert [c.tokens for c in candidates] == [("甲", "丙"), ("乙", "丁")]


def test_mine_candidates_validates_parameters():
    with pytest.raises(ValueError):
        mine_candidates([], min_count=1)
    with pytest.raises(ValueError):
        mine_candidates([], max_n=1)
    with pytest.raises(ValueError):
        mine_candidates([], max_n=7)


def test_mined_counts_match_oracle_on_random_corpora():
    stream = Stream(32)
    for case in range(200):
        docs = random_docs(1000 + case, 1 + stream.randbelow(4),
                           sentences_per_doc=(1, 4), sentence_len=(2, 20),
                           pool="甲乙丙丁")
        max_n = 2 + stream.randbelow(3)
        mined = mine_candidates(docs, min_count=2, max_n=max_n)
        exhaustive = _exhaustive_counts(docs, max_n)
        expected = {
            key: n for key, n in exhaustive.items() if len(key) >= 2 and n >= 2
        }
        assert {c.tokens: c.count for c in mined} == expected


def test_merge_external_keeps_mined_entries():
    docs = [Document(0, ["甲乙丙甲乙"])]
    mined = mine_candidates(docs, min_count=2, max_n=2)
    stats = CorpusStats.from_documents(docs, 2)
    merged = merge_external(mined, [("甲", "乙"), ("丙", "甲"), ("丁", "戊")], stats)
    by_key = {c.tokens: c for c in merged}
    assert not by_key[("甲", "乙")].external  # mined entry wins
    assert by_key[("甲", "乙")].count == 2
    # present in the corpus below min_count: real features, external flag
    assert by_key[("丙", "甲")].external
    assert by_key[("丙", "甲")].count == 1
    assert by_key[("丙", "甲")].cohesion == pytest.approx(stats.cohesion(("丙", "甲")))
    # absent from the corpus: zeroed features
    assert by_key[("丁", "戊")].external
    assert by_key[("丁", "戊")].count == 0
    assert by_key[("丁", "戊")].cohesion == 0.0
    counts = [c.count for c in merged]
    assert counts == sorted(counts, reverse=True)


def test_merge_external_without_stats_zeroes_features():
    merged = merge_external([], [("甲", "乙")])
    assert merged[0].count == 0 and merged[0].external


def test_candidate_file_round_trip(tmp_path):
    candidates = [
        PhraseCandidate(("甲", "乙"), 12, 3.25, 1.0986122886681098),
        PhraseCandidate(("丙", "丁", "戊"), 5, -0.5, 0.0, external=True),
    ]
    path = str(tmp_path / "cands.tsv")
    write_candidates(path, candidates)
    raw = open(path, encoding="utf-8").read()
    assert raw.splitlines()[0] == "甲 乙\t12\t3.250000000\t1.098612289\t0"
    assert raw.splitlines()[1].endswith("\t1")
    loaded = read_candidates(path)
    assert [(c.tokens, c.count, c.external) for c in loaded] == [
        (("甲", "乙"), 12, False),
        (("丙", "丁", "戊"), 5, True),
    ]
    assert loaded[0].cohesion == pytest.approx(3.25, abs=1e-9)
    assert all(c.quality is None for c in loaded)


def test_candidate_file_round_trip_with_quality(tmp_path):
    candidates = [PhraseCandidate(("甲", "乙"), 3, 1.0, 2.0, quality=0.75)]
    path = str(tmp_path / "cands.tsv")
    write_candidates(path, candidates)
    assert open(path, encoding="utf-8").read().count("\t") == 5
    assert read_candidates(path)[0].quality == pytest.approx(0.75, abs=1e-9)


def test_read_candidates_rejects_malformed_rows(tmp_path):
    path = tmp_path / "cands.tsv"
    path.write_text("甲 乙\t12\t1.0\n", encoding="utf-8")
    with pytest.raises(InputFormatError, match="line 1"):
        read_candidates(str(path))
    path.write_text("甲 乙\ttwelve\t1.0\t1.0\t0\n", encoding="utf-8")
    with pytest.raises(InputFormatError, match="line 1"):
        read_candidates(str(path))


def test_load_phrase_list_tokenizes(tmp_path):
    path = tmp_path / "phrases.txt"
    path.write_text("气虚血瘀\n\nCT造影\n", encoding="utf-8")
    assert load_phrase_list(str(path)) == [
        ("气", "虚", "血", "瘀"),
        ("ct", "造", "影"),
    ]
