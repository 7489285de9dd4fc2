"""Miniature masked-LM verifier: a BERT-style encoder in plain NumPy.

Forward pass, analytic gradients, and a plain-SGD training loop, all in
float64 with no framework, so generated examples can be proven trainable
and every gradient can be checked against central finite differences.

Architecture: token+position+segment embeddings -> layer norm -> N x
(multi-head self-attention + residual + layer norm; GELU feed-forward +
residual + layer norm).  MLM logits come from the tied token-embedding
transpose at the masked positions; NSP logits from position 0.  The GELU
is the tanh approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .corpus import ACTION_MASK, Document, PretrainExample
from .errors import TrainingError
from .lexicon import EntityLexicon
from .masking import GenerationConfig, generate_examples, pack_pair
from .rng import Stream
from .tokenizer import CLS_ID, MASK_ID, SEP_ID, Vocabulary, build_vocab, token_texts

_LN_EPS = 1e-12
_GELU_C = math.sqrt(2.0 / math.pi)
_BATCH_TAG = 5

Params = dict[str, np.ndarray]


@dataclass
class VerifierConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 2
    hidden_size: int = 64
    ff_size: int = 128
    max_seq_len: int = 128
    learning_rate: float = 1e-3
    steps: int = 100
    seed: int = 0
    warmup_steps: int = 0
    batch_size: int = 8

    def validate(self) -> None:
        if self.hidden_size % self.num_heads != 0:
            raise ValueError("hidden_size must be divisible by num_heads")
        if self.vocab_size < 6:
            raise ValueError("vocab_size must cover the specials plus content")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


def init_params(config: VerifierConfig) -> Params:
    """Seeded Gaussian init (std 0.02); layer-norm gains 1, all biases 0."""
    config.validate()
    rng = np.random.RandomState(config.seed)
    d, f, v = config.hidden_size, config.ff_size, config.vocab_size
    params: Params = {}

    def gauss(name: str, *shape: int) -> None:
        params[name] = rng.normal(0.0, 0.02, size=shape)

    def zeros(name: str, *shape: int) -> None:
        params[name] = np.zeros(shape)

    def ones(name: str, *shape: int) -> None:
        params[name] = np.ones(shape)

    gauss("tok_emb", v, d)
    gauss("pos_emb", config.max_seq_len, d)
    gauss("seg_emb", 2, d)
    ones("emb_ln_g", d)
    zeros("emb_ln_b", d)
    for i in range(config.num_layers):
        p = f"layer{i}."
        for w in ("wq", "wk", "wv", "wo"):
            gauss(p + w, d, d)
        for b in ("bq", "bk", "bv", "bo"):
            zeros(p + b, d)
        ones(p + "ln1_g", d)
        zeros(p + "ln1_b", d)
        gauss(p + "w1", d, f)
        zeros(p + "b1", f)
        gauss(p + "w2", f, d)
        zeros(p + "b2", d)
        ones(p + "ln2_g", d)
        zeros(p + "ln2_b", d)
    zeros("mlm_bias", v)
    gauss("nsp_w", d, 2)
    zeros("nsp_b", 2)
    return params


def zero_params(config: VerifierConfig) -> Params:
    """All-zero weights with unit layer-norm gains (uniform-logit model)."""
    params = init_params(config)
    for name, value in params.items():
        if name.endswith(("ln_g", "ln1_g", "ln2_g")):
            params[name] = np.ones_like(value)
        else:
            params[name] = np.zeros_like(value)
    return params


def _ln_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _ln_backward(dy: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv, g = cache
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, (dy * xhat).sum(0), dy.sum(0)


def _gelu_forward(x: np.ndarray):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_backward(dy: np.ndarray, cache) -> np.ndarray:
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def forward(params: Params, config: VerifierConfig, example: PretrainExample):
    """Encoder forward pass.

    Returns (mlm_logits at the example's masked positions, nsp_logits,
    cache for the backward pass).
    """
    ids = np.asarray(example.input_ids)
    seg = np.asarray(example.segment_ids)
    positions = np.asarray(example.masked_positions)
    s = len(ids)
    d, h = config.hidden_size, config.num_heads
    dh = config.head_dim
    if s > config.max_seq_len:
        raise ValueError(f"sequence length {s} exceeds max_seq_len {config.max_seq_len}")
    if ids.max(initial=0) >= config.vocab_size:
        raise ValueError("token id out of vocabulary range")

    x = params["tok_emb"][ids] + params["pos_emb"][:s] + params["seg_emb"][seg]
    assert x.shape == (s, d)
    hdn, emb_ln = _ln_forward(x, params["emb_ln_g"], params["emb_ln_b"])
    layers = []
    for i in range(config.num_layers):
        p = f"layer{i}."
        x_in = hdn
        q = x_in @ params[p + "wq"] + params[p + "bq"]
        k = x_in @ params[p + "wk"] + params[p + "bk"]
        v = x_in @ params[p + "wv"] + params[p + "bv"]
        q3 = q.reshape(s, h, dh).transpose(1, 0, 2)
        k3 = k.reshape(s, h, dh).transpose(1, 0, 2)
        v3 = v.reshape(s, h, dh).transpose(1, 0, 2)
        scores = q3 @ k3.transpose(0, 2, 1) / math.sqrt(dh)
        assert scores.shape == (h, s, s)
        probs = _softmax(scores)
        ctx = (probs @ v3).transpose(1, 0, 2).reshape(s, d)
        attn = ctx @ params[p + "wo"] + params[p + "bo"]
        h1, ln1 = _ln_forward(x_in + attn, params[p + "ln1_g"], params[p + "ln1_b"])
        a1 = h1 @ params[p + "w1"] + params[p + "b1"]
        g1, gelu = _gelu_forward(a1)
        a2 = g1 @ params[p + "w2"] + params[p + "b2"]
        h2, ln2 = _ln_forward(h1 + a2, params[p + "ln2_g"], params[p + "ln2_b"])
        layers.append(
            dict(x_in=x_in, q3=q3, k3=k3, v3=v3, probs=probs, ctx=ctx,
                 ln1=ln1, h1=h1, g1=g1, gelu=gelu, ln2=ln2)
        )
        hdn = h2
    hm = hdn[positions]
    mlm_logits = hm @ params["tok_emb"].T + params["mlm_bias"]
    assert mlm_logits.shape == (len(positions), config.vocab_size)
    nsp_logits = hdn[0] @ params["nsp_w"] + params["nsp_b"]
    assert nsp_logits.shape == (2,)
    cache = dict(ids=ids, seg=seg, positions=positions, s=s,
                 emb_ln=emb_ln, layers=layers, hdn=hdn, hm=hm)
    return mlm_logits, nsp_logits, cache


def _backward(
    params: Params,
    config: VerifierConfig,
    cache: dict,
    d_mlm_logits: np.ndarray,
    d_nsp_logits: np.ndarray,
    grads: Params,
) -> None:
    """Accumulate gradients for one example into `grads`."""
    s = cache["s"]
    d, h, dh = config.hidden_size, config.num_heads, config.head_dim

    grads["mlm_bias"] += d_mlm_logits.sum(0)
    grads["tok_emb"] += d_mlm_logits.T @ cache["hm"]
    d_hdn = np.zeros((s, d))
    d_hdn[cache["positions"]] += d_mlm_logits @ params["tok_emb"]
    grads["nsp_w"] += np.outer(cache["hdn"][0], d_nsp_logits)
    grads["nsp_b"] += d_nsp_logits
    d_hdn[0] += d_nsp_logits @ params["nsp_w"].T

    for i in reversed(range(config.num_layers)):
        p = f"layer{i}."
        lay = cache["layers"][i]
        d_sum2, dg, db = _ln_backward(d_hdn, lay["ln2"])
        grads[p + "ln2_g"] += dg
        grads[p + "ln2_b"] += db
        d_h1 = d_sum2.copy()
        d_a2 = d_sum2
        grads[p + "w2"] += lay["g1"].T @ d_a2
        grads[p + "b2"] += d_a2.sum(0)
        d_g1 = d_a2 @ params[p + "w2"].T
        d_a1 = _gelu_backward(d_g1, lay["gelu"])
        grads[p + "w1"] += lay["h1"].T @ d_a1
        grads[p + "b1"] += d_a1.sum(0)
        d_h1 += d_a1 @ params[p + "w1"].T

        d_sum1, dg, db = _ln_backward(d_h1, lay["ln1"])
        grads[p + "ln1_g"] += dg
        grads[p + "ln1_b"] += db
        d_x = d_sum1.copy()
        d_attn = d_sum1
        grads[p + "wo"] += lay["ctx"].T @ d_attn
        grads[p + "bo"] += d_attn.sum(0)
        d_ctx = (d_attn @ params[p + "wo"].T).reshape(s, h, dh).transpose(1, 0, 2)
        d_probs = d_ctx @ lay["v3"].transpose(0, 2, 1)
        d_v3 = lay["probs"].transpose(0, 2, 1) @ d_ctx
        probs = lay["probs"]
        d_scores = probs * (d_probs - (d_probs * probs).sum(-1, keepdims=True))
        d_scores /= math.sqrt(dh)
        d_q3 = d_scores @ lay["k3"]
        d_k3 = d_scores.transpose(0, 2, 1) @ lay["q3"]
        d_q = d_q3.transpose(1, 0, 2).reshape(s, d)
        d_k = d_k3.transpose(1, 0, 2).reshape(s, d)
        d_v = d_v3.transpose(1, 0, 2).reshape(s, d)
        x_in = lay["x_in"]
        grads[p + "wq"] += x_in.T @ d_q
        grads[p + "bq"] += d_q.sum(0)
        grads[p + "wk"] += x_in.T @ d_k
        grads[p + "bk"] += d_k.sum(0)
        grads[p + "wv"] += x_in.T @ d_v
        grads[p + "bv"] += d_v.sum(0)
        d_x += d_q @ params[p + "wq"].T
        d_x += d_k @ params[p + "wk"].T
        d_x += d_v @ params[p + "wv"].T
        d_hdn = d_x

    d_x0, dg, db = _ln_backward(d_hdn, cache["emb_ln"])
    grads["emb_ln_g"] += dg
    grads["emb_ln_b"] += db
    np.add.at(grads["tok_emb"], cache["ids"], d_x0)
    grads["pos_emb"][:s] += d_x0
    np.add.at(grads["seg_emb"], cache["seg"], d_x0)


def batch_losses(
    params: Params, config: VerifierConfig, batch: list[PretrainExample]
) -> tuple[float, float, float]:
    """(total, mlm, nsp) losses, forward only.

    mlm is the mean cross-entropy over every masked position in the
    batch; nsp the mean over examples; total their sum.
    """
    total_positions = sum(len(e.masked_positions) for e in batch)
    mlm_sum, nsp_sum = 0.0, 0.0
    for example in batch:
        mlm_logits, nsp_logits, _ = forward(params, config, example)
        logp = _log_softmax(mlm_logits)
        mlm_sum -= logp[np.arange(len(example.masked_positions)), example.masked_label_ids].sum()
        nsp_sum -= _log_softmax(nsp_logits)[example.nsp_label]
    mlm = float(mlm_sum) / total_positions
    nsp = float(nsp_sum) / len(batch)
    return mlm + nsp, mlm, nsp


def loss_and_grad(
    params: Params, config: VerifierConfig, batch: list[PretrainExample]
) -> tuple[float, float, float, Params]:
    """(total, mlm, nsp, gradients) over a batch of examples."""
    if not batch:
        raise ValueError("batch must be non-empty")
    grads: Params = {name: np.zeros_like(value) for name, value in params.items()}
    total_positions = sum(len(e.masked_positions) for e in batch)
    mlm_sum, nsp_sum = 0.0, 0.0
    for example in batch:
        mlm_logits, nsp_logits, cache = forward(params, config, example)
        labels = np.asarray(example.masked_label_ids)
        logp = _log_softmax(mlm_logits)
        example_mlm = -logp[np.arange(len(labels)), labels].sum()
        p_nsp = _softmax(nsp_logits)
        example_nsp = -_log_softmax(nsp_logits)[example.nsp_label]
        if not (np.isfinite(example_mlm) and np.isfinite(example_nsp)):
            raise TrainingError(
                f"non-finite loss on example (doc {example.doc_id}, "
                f"dupe {example.dupe_index}, index {example.example_index})"
            )
        mlm_sum += float(example_mlm)
        nsp_sum += float(example_nsp)
        d_mlm = _softmax(mlm_logits)
        d_mlm[np.arange(len(labels)), labels] -= 1.0
        d_mlm /= total_positions
        d_nsp = p_nsp.copy()
        d_nsp[example.nsp_label] -= 1.0
        d_nsp /= len(batch)
        _backward(params, config, cache, d_mlm, d_nsp, grads)
    mlm = mlm_sum / total_positions
    nsp = nsp_sum / len(batch)
    return mlm + nsp, mlm, nsp, grads


@dataclass
class TrainResult:
    params: Params
    # (step, total, mlm, nsp) full-dataset losses at step 0, every 10th
    # step, and the final step
    curve: list[tuple[int, float, float, float]]

    @property
    def initial_mlm(self) -> float:
        return self.curve[0][2]

    @property
    def final_mlm(self) -> float:
        return self.curve[-1][2]


def train(config: VerifierConfig, examples: list[PretrainExample]) -> TrainResult:
    """Plain SGD with optional linear warmup (default off) and a seeded
    batch order.  The loss curve records full-dataset losses, so it is a
    pure function of (config, examples, seed)."""
    config.validate()
    if not examples:
        raise ValueError("no training examples")
    params = init_params(config)
    curve = [(0, *batch_losses(params, config, examples))]
    order: list[int] = []
    epoch = 0
    cursor = 0
    for step in range(1, config.steps + 1):
        batch_idx = []
        while len(batch_idx) < config.batch_size:
            if cursor >= len(order):
                order = list(range(len(examples)))
                Stream(config.seed, _BATCH_TAG, epoch).shuffle(order)
                epoch += 1
                cursor = 0
            batch_idx.append(order[cursor])
            cursor += 1
        batch = [examples[i] for i in batch_idx]
        total, _, _, grads = loss_and_grad(params, config, batch)
        if not math.isfinite(total):
            raise TrainingError(f"training diverged at step {step}")
        lr = config.learning_rate
        if config.warmup_steps > 0 and step <= config.warmup_steps:
            lr *= step / config.warmup_steps
        for name in params:
            params[name] -= lr * grads[name]
        if step % 10 == 0 or step == config.steps:
            curve.append((step, *batch_losses(params, config, examples)))
    return TrainResult(params, curve)


def finite_difference_check(
    params: Params,
    config: VerifierConfig,
    batch: list[PretrainExample],
    num_coords: int = 200,
    step: float = 1e-4,
    seed: int = 0,
) -> dict:
    """Compare analytic gradients against central differences on randomly
    sampled coordinates; returns the worst relative error and its location."""
    _, _, _, grads = loss_and_grad(params, config, batch)
    names = sorted(params)
    sizes = [params[n].size for n in names]
    total = sum(sizes)
    stream = Stream(seed, 6)
    worst = {"rel_err": 0.0, "param": None, "index": None}
    for _ in range(num_coords):
        flat = stream.randbelow(total)
        for name, size in zip(names, sizes):
            if flat < size:
                break
            flat -= size
        original = params[name].flat[flat]
        params[name].flat[flat] = original + step
        up = batch_losses(params, config, batch)[0]
        params[name].flat[flat] = original - step
        down = batch_losses(params, config, batch)[0]
        params[name].flat[flat] = original
        numeric = (up - down) / (2 * step)
        analytic = float(grads[name].flat[flat])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        if rel > worst["rel_err"]:
            worst = {"rel_err": rel, "param": name, "index": int(flat)}
    return worst


def _entity_cloze_probes(
    doc_tokens: dict[int, list[list[str]]],
    probe_doc_ids: list[int],
    lexicon: EntityLexicon,
    vocab: Vocabulary,
    max_seq_len: int,
) -> list[PretrainExample]:
    """Consecutive-sentence pairs from held-out documents with every
    dictionary entity fully masked; no other positions are touched."""
    matcher = lexicon.matcher()
    probes = []
    for doc_id in probe_doc_ids:
        sents = doc_tokens[doc_id]
        for i in range(len(sents) - 1):
            packed = pack_pair(sents[i], sents[i + 1], 1, max_seq_len)
            positions = []
            for tokens, offset in (
                (packed.tokens_a, 1),
                (packed.tokens_b, 2 + len(packed.tokens_a)),
            ):
                for s, e, _ in matcher.leftmost_longest(tokens):
                    positions.extend(range(s + offset, e + offset))
            if not positions:
                continue
            ids_a = [vocab.id_of(t) for t in packed.tokens_a]
            ids_b = [vocab.id_of(t) for t in packed.tokens_b]
            original = [CLS_ID] + ids_a + [SEP_ID] + ids_b + [SEP_ID]
            input_ids = list(original)
            for pos in positions:
                input_ids[pos] = MASK_ID
            probes.append(
                PretrainExample(
                    doc_id=doc_id,
                    dupe_index=0,
                    example_index=i,
                    input_ids=input_ids,
                    segment_ids=[0] * (len(ids_a) + 2) + [1] * (len(ids_b) + 1),
                    masked_positions=positions,
                    masked_label_ids=[original[p] for p in positions],
                    actions=[ACTION_MASK] * len(positions),
                    nsp_label=1,
                )
            )
    return probes


def masking_ablation(
    docs: list[Document],
    lexicon: EntityLexicon,
    phrase_keys: list[tuple[str, ...]],
    config: VerifierConfig,
) -> dict:
    """Train twin models on knowledge-masked vs char-masked examples from
    the same corpus and seed; report each arm's final loss on held-out
    whole-entity cloze probes.  Purely descriptive: no winner is asserted.
    """
    if len(docs) < 2:
        raise ValueError("masking ablation needs at least two documents")
    doc_tokens = {
        doc.doc_id: [token_texts(s) for s in doc.sentences] for doc in docs
    }
    vocab = build_vocab(
        (t for sents in doc_tokens.values() for sent in sents for t in sent),
        min_count=1,
    )
    config = VerifierConfig(**{**asdict(config), "vocab_size": len(vocab)})
    if len(docs) >= 5:
        probe_doc_ids = [d.doc_id for d in docs[::5]]
    else:
        probe_doc_ids = [docs[-1].doc_id]
    train_docs = [d for d in docs if d.doc_id not in set(probe_doc_ids)]
    gen = GenerationConfig(
        dupe_factor=1, max_seq_len=config.max_seq_len, seed=config.seed
    )
    probes = _entity_cloze_probes(
        doc_tokens, probe_doc_ids, lexicon, vocab, config.max_seq_len
    )
    report: dict = {
        "config": asdict(config),
        "probe_count": len(probes),
        "arms": {},
    }
    arms = {
        "knowledge_masking": (lexicon, phrase_keys),
        "char_masking": (None, []),
    }
    for arm_name, (arm_lexicon, arm_phrases) in arms.items():
        examples = generate_examples(train_docs, arm_lexicon, arm_phrases, vocab, gen)
        result = train(config, examples)
        probe_mlm = (
            batch_losses(result.params, config, probes)[1] if probes else None
        )
        report["arms"][arm_name] = {
            "train_examples": len(examples),
            "initial_mlm": result.initial_mlm,
            "final_mlm": result.final_mlm,
            "probe_entity_mlm": probe_mlm,
        }
    return report
