"""Binary phrase classifier: hashed character n-grams + logistic regression.

Features are character n-grams of orders 1-3 over the phrase padded with
begin/end sentinels (n-grams consisting only of sentinels are skipped).
Each n-gram is bucketed by FNV-1a/64 of its UTF-8 bytes XORed with the
hash seed, modulo the feature dimension; the count vector is then
L2-normalized.  Training is mini-batch logistic regression with a
deterministic epoch shuffle, so two runs with one seed produce one model.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputFormatError, TrainingError
from .corpus import Document
from .lexicon import EntityLexicon
from .phrases import PhraseCandidate
from .rng import Stream
from .tokenizer import token_texts

logger = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_BEGIN = "\x02"
_END = "\x03"

BATCH_SIZE = 32
MODEL_MAGIC = "kmask-filter v1"

# Stream domains for training shuffles and negative sampling.
_SHUFFLE_TAG = 2
_NEGATIVE_TAG = 3

POSITIVE = 1
NEGATIVE = 0


@dataclass(frozen=True)
class LabeledPhrase:
    text: str
    label: int  # POSITIVE or NEGATIVE


@dataclass
class FilterModel:
    feature_dim: int
    hash_seed: int
    weights: np.ndarray  # (feature_dim,)
    bias: float

    @classmethod
    def zeros(cls, feature_dim: int = 1 << 16, hash_seed: int = 0) -> "FilterModel":
        return cls(feature_dim, hash_seed, np.zeros(feature_dim), 0.0)


@dataclass
class FilterTraining:
    model: FilterModel
    epoch_losses: list[float]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def featurize(phrase: str, feature_dim: int, hash_seed: int) -> dict[int, float]:
    """Sparse L2-normalized bucket counts of the phrase's character n-grams."""
    if feature_dim < 2:
        raise ValueError("feature_dim must be >= 2")
    padded = _BEGIN + phrase + _END
    counts: dict[int, float] = {}
    for order in (1, 2, 3):
        for i in range(len(padded) - order + 1):
            gram = padded[i : i + order]
            if all(ch in (_BEGIN, _END) for ch in gram):
                continue  # pure-sentinel n-gram carries no phrase content
            bucket = (fnv1a64(gram.encode("utf-8")) ^ (hash_seed & _MASK64)) % feature_dim
            counts[bucket] = counts.get(bucket, 0.0) + 1.0
    norm = math.sqrt(sum(v * v for v in counts.values()))
    if norm == 0.0:
        return {}
    return {k: v / norm for k, v in counts.items()}


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _raw_score(model: FilterModel, features: dict[int, float]) -> float:
    return sum(model.weights[k] * v for k, v in features.items()) + model.bias


def score_phrase(model: FilterModel, phrase: str) -> float:
    """Probability that the phrase is in-domain."""
    return _sigmoid(_raw_score(model, featurize(phrase, model.feature_dim, model.hash_seed)))


def batch_loss_and_grad(
    model: FilterModel,
    features: list[dict[int, float]],
    labels: list[int],
) -> tuple[float, np.ndarray, float]:
    """Mean log-loss with analytic gradients for (weights, bias).

    Loss per item is computed via softplus, log(1 + e^-|z|) + max(z, 0) - y*z,
    which is exact and never takes log of zero.
    """
    batch = len(features)
    grad_w = np.zeros_like(model.weights)
    grad_b = 0.0
    loss = 0.0
    for feats, label in zip(features, labels):
        z = _raw_score(model, feats)
        loss += math.log1p(math.exp(-abs(z))) + max(z, 0.0) - label * z
        delta = _sigmoid(z) - label
        for k, v in feats.items():
            grad_w[k] += delta * v
        grad_b += delta
    return loss / batch, grad_w / batch, grad_b / batch


def train_filter(
    data: list[LabeledPhrase],
    epochs: int = 50,
    learning_rate: float = 0.5,
    rng_seed: int = 0,
    feature_dim: int = 1 << 16,
    hash_seed: int = 0,
) -> FilterTraining:
    """Mini-batch gradient descent (batch 32, epoch-wise seeded shuffle)."""
    labels_present = {item.label for item in data}
    if labels_present != {POSITIVE, NEGATIVE}:
        raise TrainingError("training data must contain both labels")
    model = FilterModel.zeros(feature_dim, hash_seed)
    cached = [featurize(item.text, feature_dim, hash_seed) for item in data]
    order = list(range(len(data)))
    epoch_losses: list[float] = []
    for epoch in range(epochs):
        Stream(rng_seed, _SHUFFLE_TAG, epoch).shuffle(order)
        total, batches = 0.0, 0
        for at in range(0, len(order), BATCH_SIZE):
            idx = order[at : at + BATCH_SIZE]
            feats = [cached[i] for i in idx]
            labels = [data[i].label for i in idx]
            loss, grad_w, grad_b = batch_loss_and_grad(model, feats, labels)
            model.weights -= learning_rate * grad_w
            model.bias -= learning_rate * grad_b
            total += loss
            batches += 1
        epoch_losses.append(total / batches)
    return FilterTraining(model, epoch_losses)


def augment_positives(
    lexicon: EntityLexicon, attribute_terms: list[str]
) -> list[LabeledPhrase]:
    """Positives: entity surfaces, attribute terms, and entity+attribute
    concatenations, deduplicated in a deterministic order."""
    seen: set[str] = set()
    out: list[LabeledPhrase] = []

    def push(text: str) -> None:
        if text and text not in seen:
            seen.add(text)
            out.append(LabeledPhrase(text, POSITIVE))

    surfaces = lexicon.surfaces()
    for surface in surfaces:
        push(surface)
    for term in attribute_terms:
        push(term)
    for surface in surfaces:
        for term in attribute_terms:
            push(surface + term)
    return out


def sample_negatives(
    docs: list[Document],
    n: int,
    rng_seed: int = 0,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> list[LabeledPhrase]:
    """n distinct random token windows (length 2-4) not in the positive set.

    Returns fewer when the corpus cannot supply n distinct windows.
    """
    sentences = [token_texts(s) for doc in docs for s in doc.sentences]
    windows: list[tuple[int, int, int]] = []  # (sentence, start, length)
    for si, sent in enumerate(sentences):
        for length in (2, 3, 4):
            for start in range(len(sent) - length + 1):
                windows.append((si, start, length))
    if n == 0 or not windows:
        return []
    stream = Stream(rng_seed, _NEGATIVE_TAG)
    chosen: list[LabeledPhrase] = []
    seen: set[str] = set()
    attempts = 0
    max_attempts = max(1000, 50 * n)
    while len(chosen) < n and attempts < max_attempts:
        attempts += 1
        si, start, length = windows[stream.randbelow(len(windows))]
        text = "".join(sentences[si][start : start + length])
        if text in seen or text in exclude:
            continue
        seen.add(text)
        chosen.append(LabeledPhrase(text, NEGATIVE))
    if len(chosen) < n:
        logger.warning("only %d of %d requested negatives available", len(chosen), n)
    return chosen


def filter_candidates(
    candidates: list[PhraseCandidate], model: FilterModel, threshold: float = 0.5
) -> list[PhraseCandidate]:
    """Score every candidate (filling `quality`) and keep those at or
    above the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be strictly between 0 and 1")
    kept = []
    for c in candidates:
        c.quality = score_phrase(model, c.text)
        if c.quality >= threshold:
            kept.append(c)
    return kept


def save_model(path: str, model: FilterModel) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{MODEL_MAGIC} {model.feature_dim} {model.hash_seed}\n")
        f.write(f"{model.bias:.17g}\n")
        for w in model.weights:
            f.write(f"{w:.17g}\n")


def load_model(path: str) -> FilterModel:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split(" ")
        if len(header) != 4 or " ".join(header[:2]) != MODEL_MAGIC:
            raise InputFormatError(f"{path}: not a {MODEL_MAGIC} model file")
        try:
            feature_dim, hash_seed = int(header[2]), int(header[3])
            bias = float(f.readline())
            weights = np.array([float(f.readline()) for _ in range(feature_dim)])
        except ValueError as exc:
            raise InputFormatError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(weights)):
        raise InputFormatError(f"{path}: non-finite weights")
    return FilterModel(feature_dim, hash_seed, weights, bias)
