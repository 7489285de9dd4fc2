import math

import numpy as np
import pytest

from kmask.corpus import Document
from kmask.errors import InputFormatError, TrainingError
from kmask.lexicon import EntityLexicon
from kmask.phrase_filter import (
    LabeledPhrase,
    FilterModel,
    NEGATIVE,
    POSITIVE,
    augment_positives,
    batch_loss_and_grad,
    featurize,
    filter_candidates,
    fnv1a64,
    load_model,
    sample_negatives,
    save_model,
    score_phrase,
    train_filter,
)
from kmask.phrases import PhraseCandidate
from kmask.rng import Stream

from conftest import random_docs


def test_fnv1a64_published_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_featurize_single_char_by_hand():
    # padded "\x02痛\x03" yields grams 痛, \x02痛, 痛\x03, \x02痛\x03;
    # pure-sentinel grams are skipped; four grams of count 1 normalize
    # to 1/2 each
    dim, seed = 1 << 12, 9
    feats = featurize("痛", dim, seed)
    expected = {}
    for gram in ("痛", "\x02痛", "痛\x03", "\x02痛\x03"):
        bucket = (fnv1a64(gram.encode("utf-8")) ^ seed) % dim
        expected[bucket] = expected.get(bucket, 0.0) + 1.0
    norm = math.sqrt(sum(v * v for v in expected.values()))
    expected = {k: v / norm for k, v in expected.items()}
    assert feats == pytest.approx(expected)


def test_featurize_is_unit_length():
    feats = featurize("头孢克肟", 1 << 16, 0)
    assert sum(v * v for v in feats.values()) == pytest.approx(1.0, abs=1e-12)


def test_featurize_empty_phrase_is_empty():
    assert featurize("", 1 << 16, 0) == {}


def test_featurize_collisions_add_up():
    # with two buckets everything collides; only the split varies
    feats = featurize("甲乙丙", 2, 0)
    assert set(feats) <= {0, 1}
    assert sum(v * v for v in feats.values()) == pytest.approx(1.0, abs=1e-12)


def test_hash_seed_relocates_features():
    a = featurize("甲乙", 1 << 16, 0)
    b = featurize("甲乙", 1 << 16, 12345)
    assert a != b
    assert sorted(a.values()) == pytest.approx(sorted(b.values()))


def test_zero_model_scores_half():
    model = FilterModel.zeros(1 << 10, 0)
    assert score_phrase(model, "任意短语") == pytest.approx(0.5)


def test_batch_loss_matches_direct_log_loss():
    model = FilterModel.zeros(64, 3)
    rng = np.random.RandomState(7)
    model.weights = rng.normal(0, 1.0, 64)
    model.bias = 0.25
    phrases = ["头痛", "甲乙丙", "发热咳嗽", "完全无关"]
    labels = [1, 0, 1, 0]
    feats = [featurize(p, 64, 3) for p in phrases]
    loss, _, _ = batch_loss_and_grad(model, feats, labels)
    direct = 0.0
    for f, y in zip(feats, labels):
        z = sum(model.weights[k] * v for k, v in f.items()) + model.bias
        p = 1.0 / (1.0 + math.exp(-z))
        direct += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    assert loss == pytest.approx(direct / len(labels), rel=1e-12)


def test_gradients_match_finite_differences():
    stream = Stream(42)
    rng = np.random.RandomState(11)
    max_rel = 0.0
    for _ in range(20):
        dim = 32
        model = FilterModel(dim, stream.randbelow(100), rng.normal(0, 0.5, dim), float(rng.normal()))
        phrases = ["腹泻", "口服补液", "甲乙", "随访观察", "血压计"]
        batch = [
            LabeledPhrase(phrases[stream.randbelow(len(phrases))], stream.randbelow(2))
            for _ in range(4)
        ]
        feats = [featurize(b.text, dim, model.hash_seed) for b in batch]
        labels = [b.label for b in batch]
        _, grad_w, grad_b = batch_loss_and_grad(model, feats, labels)
        h = 1e-5
        for _ in range(6):
            k = stream.randbelow(dim)
            orig = model.weights[k]
            model.weights[k] = orig + h
            up = batch_loss_and_grad(model, feats, labels)[0]
            model.weights[k] = orig - h
            down = batch_loss_and_grad(model, feats, labels)[0]
            model.weights[k] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(grad_w[k] - numeric) / max(abs(grad_w[k]), abs(numeric), 1e-6)
            max_rel = max(max_rel, rel)
        model.bias += h
        up = batch_loss_and_grad(model, feats, labels)[0]
        model.bias -= 2 * h
        down = batch_loss_and_grad(model, feats, labels)[0]
        model.bias += h
        numeric = (up - down) / (2 * h)
        rel = abs(grad_b - numeric) / max(abs(grad_b), abs(numeric), 1e-6)
        max_rel = max(max_rel, rel)
    assert max_rel < 1e-4


def test_training_separates_a_separable_toy_set():
    positives = [LabeledPhrase(f"好词{c}", POSITIVE) for c in "甲乙丙丁戊己庚辛"]
    negatives = [LabeledPhrase(f"坏串{c}", NEGATIVE) for c in "壬癸子丑寅卯辰巳"]
    training = train_filter(positives + negatives, epochs=60, feature_dim=1 << 10)
    assert training.epoch_losses[-1] < training.epoch_losses[0]
    for item in positives:
        assert score_phrase(training.model, item.text) > 0.5
    for item in negatives:
        assert score_phrase(training.model, item.text) < 0.5


def test_training_requires_both_labels():
    with pytest.raises(TrainingError):
        train_filter([LabeledPhrase("甲", POSITIVE)])


def test_training_is_deterministic_per_seed():
    # more items than one batch, so the epoch shuffle actually matters
    data = [
        LabeledPhrase(f"短语{a}{b}", POSITIVE)
        for a in "甲乙丙丁戊" for b in "子丑寅卯辰"
    ] + [
        LabeledPhrase(f"噪声{a}{b}", NEGATIVE)
        for a in "己庚辛壬癸" for b in "巳午未申酉"
    ]
    assert len(data) > 32
    one = train_filter(data, epochs=5, rng_seed=3, feature_dim=256)
    two = train_filter(data, epochs=5, rng_seed=3, feature_dim=256)
    other = train_filter(data, epochs=5, rng_seed=4, feature_dim=256)
    assert np.array_equal(one.model.weights, two.model.weights)
    assert one.model.bias == two.model.bias
    assert one.epoch_losses == two.epoch_losses
    assert not np.array_equal(one.model.weights, other.model.weights)


def test_augment_positives_order_and_dedup():
    lex = EntityLexicon()
    lex.add("腹泻", "disease")
    lex.add("针灸", "treatment")
    out = augment_positives(lex, ["治疗", "腹泻"])
    # surfaces sorted by token key, then attributes, then the surface
    # x attribute concatenations; the duplicate attribute is dropped
    assert [p.text for p in out] == [
        "腹泻",
        "针灸",
        "治疗",
        "腹泻治疗",
        "腹泻腹泻",
        "针灸治疗",
        "针灸腹泻",
    ]
    assert all(p.label == POSITIVE for p in out)


def test_sample_negatives_are_plausible_windows():
    docs = random_docs(51, 10, sentences_per_doc=(2, 3), sentence_len=(10, 20))
    text_by_sentence = ["".join(s) for d in docs for s in d.sentences]
    negatives = sample_negatives(docs, 25, rng_seed=1)
    assert len(negatives) == 25
    assert len({n.text for n in negatives}) == 25
    for item in negatives:
        assert item.label == NEGATIVE
        assert 2 <= len(item.text) <= 4
        assert any(item.text in s for s in text_by_sentence)


def test_sample_negatives_respects_exclusions_and_seed():
    docs = random_docs(52, 5, sentences_per_doc=(1, 2), sentence_len=(8, 12))
    first = sample_negatives(docs, 10, rng_seed=2)
    again = sample_negatives(docs, 10, rng_seed=2)
    assert [n.text for n in first] == [n.text for n in again]
    banned = {first[0].text}
    filtered = sample_negatives(docs, 10, rng_seed=2, exclude=banned)
    assert banned.isdisjoint({n.text for n in filtered})


def test_sample_negatives_degenerate_inputs():
    assert sample_negatives([], 5) == []
    tiny = [Document(0, ["甲乙"])]
    assert [n.text for n in sample_negatives(tiny, 5)] == ["甲乙"]
    assert sample_negatives(tiny, 0) == []


def test_filter_candidates_thresholds_and_fills_quality():
    data = [LabeledPhrase(f"好词{c}", POSITIVE) for c in "甲乙丙丁"] + [
        LabeledPhrase(f"坏串{c}", NEGATIVE) for c in "戊己庚辛"
    ]
    model = train_filter(data, epochs=60, feature_dim=1 << 10).model
    candidates = [
        PhraseCandidate(("好", "词", "甲"), 5, 1.0, 1.0),
        PhraseCandidate(("坏", "串", "戊"), 5, 1.0, 1.0),
    ]
    kept = filter_candidates(candidates, model, threshold=0.5)
    assert [c.tokens for c in kept] == [("好", "词", "甲")]
    assert all(c.quality is not None for c in candidates)  # scored even if dropped
    with pytest.raises(ValueError):
        filter_candidates([], model, threshold=0.0)
    with pytest.raises(ValueError):
        filter_candidates([], model, threshold=1.0)


def test_model_file_round_trip(tmp_path):
    rng = np.random.RandomState(5)
    model = FilterModel(128, 77, rng.normal(0, 0.3, 128), -0.125)
    path = str(tmp_path / "filter.model")
    save_model(path, model)
    header = open(path, encoding="utf-8").readline()
    assert header == "kmask-filter v1 128 77\n"
    loaded = load_model(path)
    assert loaded.feature_dim == 128 and loaded.hash_seed == 77
    assert loaded.bias == model.bias
    assert np.array_equal(loaded.weights, model.weights)  # 17 digits: exact


def test_load_model_rejects_garbage(tmp_path):
    path = tmp_path / "bad.model"
    path.write_text("something-else v9 4 0\n0.0\n", encoding="utf-8")
    with pytest.raises(InputFormatError, match="not a kmask-filter"):
        load_model(str(path))
    path.write_text("kmask-filter v1 2 0\n0.0\nnan\n0.0\n", encoding="utf-8")
    with pytest.raises(InputFormatError, match="non-finite"):
        load_model(str(path))
