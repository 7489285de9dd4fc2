"""Command-line pipeline: one subcommand per preparation stage.

build-lexicon -> build-vocab -> mine-phrases -> train-filter ->
filter-phrases -> generate -> verify, plus `stats` for inspecting a
generated example file.  Every subcommand prints a one-line summary on
success.  Exit codes: 0 ok, 1 usage, 2 input format, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import dataclass, asdict

from . import __version__
from .corpus import (
    ACTION_KEEP,
    ACTION_MASK,
    ACTION_REPLACE,
    read_corpus,
    read_examples,
    write_examples,
)
from .errors import InputFormatError, KmaskError, TrainingError, UsageError
from .lexicon import load_lexicon
from .masking import GenerationConfig, generate_examples
from .phrase_filter import (
    augment_positives,
    filter_candidates,
    load_model,
    sample_negatives,
    save_model,
    train_filter,
)
from .phrases import (
    CorpusStats,
    load_phrase_list,
    merge_external,
    mine_candidates,
    read_candidates,
    write_candidates,
)
from .tokenizer import Vocabulary, build_vocab, token_texts
from .verifier import VerifierConfig, finite_difference_check, train


@dataclass
class PipelineConfig:
    """Shared flag defaults; the single place the numbers live."""

    dupe_factor: int = 10
    mask_rate: float = 0.15
    max_seq_len: int = 512
    min_seq_len: int = 0
    seed: int = 0
    threshold: float = 0.5
    min_count: int = 5
    max_n: int = 4


DEFAULTS = PipelineConfig()


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through our exit-code scheme."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _read_terms(path: str) -> list[str]:
    """One term per line, blanks skipped."""
    with open(path, "rb") as f:
        data = f.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise InputFormatError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    return [line.strip() for line in text.split("\n") if line.strip()]


def _cmd_build_lexicon(args) -> None:
    lexicon = load_lexicon(args.kg)
    lexicon.save(args.out)
    counts = lexicon.category_counts()
    breakdown = ", ".join(f"{cat}={n}" for cat, n in sorted(counts.items()))
    print(
        f"lexicon: {len(lexicon)} terms ({breakdown}); "
        f"{lexicon.dropped} dropped -> {args.out}"
    )


def _cmd_build_vocab(args) -> None:
    docs = read_corpus(args.corpus)
    vocab = build_vocab(
        (
            token
            for doc in docs
            for sentence in doc.sentences
            for token in token_texts(sentence)
        ),
        min_count=args.min_count,
    )
    vocab.save(args.out)
    print(f"vocabulary: {len(vocab)} tokens from {len(docs)} documents -> {args.out}")


def _cmd_mine_phrases(args) -> None:
    docs = read_corpus(args.corpus)
    candidates = mine_candidates(docs, min_count=args.min_count, max_n=args.max_n)
    if args.extra:
        stats = CorpusStats.from_documents(docs, args.max_n)
        candidates = merge_external(candidates, load_phrase_list(args.extra), stats)
    external = sum(1 for c in candidates if c.external)
    write_candidates(args.out, candidates)
    print(
        f"candidates: {len(candidates)} ({external} external) "
        f"from {len(docs)} documents -> {args.out}"
    )


def _cmd_train_filter(args) -> None:
    lexicon = load_lexicon(args.lexicon)
    attributes = _read_terms(args.attributes)
    docs = read_corpus(args.corpus)
    positives = augment_positives(lexicon, attributes)
    neg_count = args.neg_count if args.neg_count is not None else len(positives)
    negatives = sample_negatives(
        docs, neg_count, rng_seed=args.seed, exclude={p.text for p in positives}
    )
    training = train_filter(
        positives + negatives,
        epochs=args.epochs,
        learning_rate=args.lr,
        rng_seed=args.seed,
        feature_dim=args.feature_dim,
        hash_seed=args.hash_seed,
    )
    save_model(args.out, training.model)
    print(
        f"filter: {len(positives)} positives + {len(negatives)} negatives, "
        f"final loss {training.final_loss:.6f} -> {args.out}"
    )


def _cmd_filter_phrases(args) -> None:
    candidates = read_candidates(args.candidates)
    model = load_model(args.model)
    kept = filter_candidates(candidates, model, threshold=args.threshold)
    write_candidates(args.out, kept)
    print(
        f"phrases: kept {len(kept)} of {len(candidates)} candidates "
        f"at threshold {args.threshold} -> {args.out}"
    )


def _cmd_generate(args) -> None:
    docs = read_corpus(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    phrase_keys = (
        [c.tokens for c in read_candidates(args.phrases)] if args.phrases else []
    )
    config = GenerationConfig(
        dupe_factor=args.dupe_factor,
        mask_rate=args.mask_rate,
        max_seq_len=args.max_seq_len,
        min_seq_len=args.min_seq_len,
        seed=args.seed,
        workers=args.workers,
    )
    records = generate_examples(docs, lexicon, phrase_keys, vocab, config)
    write_examples(args.out, records)
    print(
        f"examples: {len(records)} from {len(docs)} documents "
        f"x{args.dupe_factor} dupes -> {args.out}"
    )


def _cmd_verify(args) -> None:
    examples = read_examples(args.examples)
    if not examples:
        raise InputFormatError(f"{args.examples}: no examples")
    top_id = max(
        max(max(e.input_ids), max(e.masked_label_ids)) for e in examples
    )
    longest = max(len(e.input_ids) for e in examples)
    config = VerifierConfig(
        vocab_size=max(top_id + 1, 6),
        num_layers=args.layers,
        num_heads=args.heads,
        hidden_size=args.hidden,
        ff_size=args.ff,
        max_seq_len=args.max_seq_len if args.max_seq_len else longest,
        learning_rate=args.lr,
        steps=args.steps,
        seed=args.seed,
        warmup_steps=args.warmup,
        batch_size=args.batch_size,
    )
    result = train(config, examples)
    check = None
    if args.grad_check:
        batch = examples[: config.batch_size]
        check = finite_difference_check(
            result.params, config, batch, num_coords=args.grad_check, seed=args.seed
        )
    if args.report:
        report = {
            "config": asdict(config),
            "examples": len(examples),
            "curve": [
                {"step": s, "total": t, "mlm": m, "nsp": n}
                for s, t, m, n in result.curve
            ],
            "initial_mlm": result.initial_mlm,
            "final_mlm": result.final_mlm,
            "gradient_check": check,
        }
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
    line = (
        f"verify: {len(examples)} examples, {config.steps} steps, "
        f"mlm {result.initial_mlm:.4f} -> {result.final_mlm:.4f}"
    )
    if check is not None:
        line += f", max grad rel err {check['rel_err']:.2e}"
    if args.report:
        line += f" -> {args.report}"
    print(line)


def _length_histogram(lengths: list[int], bucket: int = 64) -> str:
    counts = Counter(length // bucket for length in lengths)
    return " ".join(
        f"[{b * bucket},{(b + 1) * bucket}):{counts[b]}" for b in sorted(counts)
    )


def _cmd_stats(args) -> None:
    examples = read_examples(args.examples)
    if not examples:
        raise InputFormatError(f"{args.examples}: no examples")
    total_tokens = sum(len(e.input_ids) for e in examples)
    # the budget applies to segment tokens only, never [CLS]/[SEP]
    maskable = sum(len(e.input_ids) - 3 for e in examples)
    positions = sum(len(e.masked_positions) for e in examples)
    actions = Counter(a for e in examples for a in e.actions)
    nsp = sum(e.nsp_label for e in examples) / len(examples)
    share = {
        k: actions[k] / positions if positions else 0.0
        for k in (ACTION_MASK, ACTION_REPLACE, ACTION_KEEP)
    }
    print(
        f"stats: {len(examples)} examples, {total_tokens} tokens, "
        f"masked fraction {positions / maskable:.4f}, "
        f"actions mask/replace/keep "
        f"{share[ACTION_MASK]:.3f}/{share[ACTION_REPLACE]:.3f}/{share[ACTION_KEEP]:.3f}, "
        f"next-sentence rate {nsp:.4f}, "
        f"lengths {_length_histogram([len(e.input_ids) for e in examples])}"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="kmask", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kmask {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("build-lexicon", help="normalize an entity dictionary")
    p.add_argument("--kg", required=True, help="entity TSV: surface<TAB>category")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_lexicon)

    p = sub.add_parser("build-vocab", help="token vocabulary from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("mine-phrases", help="mine n-gram phrase candidates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=DEFAULTS.min_count)
    p.add_argument("--max-n", type=int, default=DEFAULTS.max_n)
    p.add_argument("--extra", help="external phrase list, one per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mine_phrases)

    p = sub.add_parser("train-filter", help="train the phrase quality classifier")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--attributes", required=True, help="attribute terms, one per line")
    p.add_argument("--corpus", required=True)
    p.add_argument("--neg-count", type=int, help="default: one per positive")
    p.add_argument("--seed", type=int, default=DEFAULTS.seed)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--feature-dim", type=int, default=1 << 16)
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_filter)

    p = sub.add_parser("filter-phrases", help="keep candidates the model accepts")
    p.add_argument("--candidates", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULTS.threshold)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_phrases)

    p = sub.add_parser("generate", help="emit masked pretraining examples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--phrases", help="filtered candidate TSV")
    p.add_argument("--vocab", required=True)
    p.add_argument("--dupe-factor", type=int, default=DEFAULTS.dupe_factor)
    p.add_argument("--mask-rate", type=float, default=DEFAULTS.mask_rate)
    p.add_argument("--max-seq-len", type=int, default=DEFAULTS.max_seq_len)
    p.add_argument("--min-seq-len", type=int, default=DEFAULTS.min_seq_len)
    p.add_argument("--seed", type=int, default=DEFAULTS.seed)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("verify", help="train a small encoder on generated examples")
    p.add_argument("--examples", required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=DEFAULTS.seed)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--ff", type=int, default=128)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--warmup", type=int, default=0)
    p.add_argument("--max-seq-len", type=int, help="default: longest example")
    p.add_argument(
        "--grad-check",
        type=int,
        default=0,
        metavar="N",
        help="finite-difference check N coordinates after training",
    )
    p.add_argument("--report", help="write a JSON training report here")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("stats", help="summarize a generated example file")
    p.add_argument("--examples", required=True)
    p.set_defaults(func=_cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.error("a subcommand is required")
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except KmaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
