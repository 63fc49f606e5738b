"""Command-line interface.

Exit codes: 0 success, 2 configuration/validation failure, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import aligner, mapper, remapper, tensors
from .analysis import mapping_stats, normalize_perplexity
from .corpus import filter_pairs, read_pairs
from .errors import ConfigError, StageError, TokmapError
from .hydra import compose, save_composition
from .pipeline import PipelineConfig, run_pipeline
from .wordizer import (
    CONTINUATION,
    WORD_START,
    MarkerStyle,
    MergeRules,
    Vocab,
    bpe_encode,
    bpe_train,
)


def _add_tokenizer_args(parser, prefix: str) -> None:
    parser.add_argument(f"--{prefix}-vocab", required=True, help=f"{prefix} vocab JSON")
    parser.add_argument(f"--{prefix}-merges", help=f"{prefix} merges file")


def _load_tokenizer(vocab_path, merges_path):
    vocab = Vocab.load(vocab_path)
    merges = MergeRules.load(merges_path) if merges_path else MergeRules()
    return vocab, merges


def _wordized_key_pairs(args):
    """Read, filter, wordize a corpus into (source keys, target keys) pairs."""
    from .wordizer import remerge_words

    source_vocab, source_merges = _load_tokenizer(args.source_vocab, args.source_merges)
    target_vocab, target_merges = _load_tokenizer(args.target_vocab, args.target_merges)
    pairs = []
    sequences = []
    stream = read_pairs(args.corpus, max_pairs=args.max_pairs)
    stream = filter_pairs(stream, args.min_chars, args.max_chars, args.ratio_cap)
    for pair in stream:
        if args.pretokenized:
            src_ids = []
            for surface in pair.source_text.split():
                tid = source_vocab.id_of(surface)
                if tid is None:
                    raise ConfigError(f"line {pair.line_no}: unknown source token {surface!r}")
                src_ids.append(tid)
            tgt_ids = []
            for surface in pair.target_text.split():
                tid = target_vocab.id_of(surface)
                if tid is None:
                    raise ConfigError(f"line {pair.line_no}: unknown target token {surface!r}")
                tgt_ids.append(tid)
        else:
            src_ids = bpe_encode(pair.source_text, source_vocab, source_merges)
            tgt_ids = bpe_encode(pair.target_text, target_vocab, target_merges)
        src_seq = remerge_words(src_ids, source_vocab)
        tgt_seq = remerge_words(tgt_ids, target_vocab)
        sequences.append((src_seq, tgt_seq))
        pairs.append((src_seq.word_keys(source_vocab), tgt_seq.word_keys(target_vocab)))
    return source_vocab, target_vocab, sequences, pairs


def _cmd_tokenize(args) -> int:
    vocab, merges = _load_tokenizer(args.vocab, args.merges)
    with open(args.input, "r", encoding="utf-8") as src, \
         open(args.output, "w", encoding="utf-8") as dst:
        for line in src:
            ids = bpe_encode(line.rstrip("\n"), vocab, merges)
            dst.write(" ".join(vocab.surface(i) for i in ids))
            dst.write("\n")
    return 0


def _cmd_train_bpe(args) -> int:
    style = MarkerStyle(args.style, args.marker)

    def lines():
        for path in args.input:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    yield line.rstrip("\n")

    vocab, merges = bpe_train(
        lines(), args.vocab_size, style,
        special_tokens=args.special, ideographic_mode=args.ideographic,
    )
    vocab.save(args.out_vocab)
    merges.save(args.out_merges)
    print(f"trained vocab of {len(vocab)} tokens ({len(merges)} merges)")
    return 0


def _cmd_align(args) -> int:
    _, _, _, pairs = _wordized_key_pairs(args)
    if not pairs:
        raise ConfigError("no sentence pairs to align")
    config = PipelineConfig(
        corpus=[args.corpus], source_vocab=args.source_vocab,
        target_vocab=args.target_vocab,
        iterations=args.iters, p0=args.p0, tension=getattr(args, "lambda"),
        vb_alpha=args.vb_alpha, optimize_tension=not args.no_optimize_lambda,
        direction=args.direction, symmetrization=args.sym,
        threads=args.threads,
    )
    from .pipeline import _align_corpus

    alignments = _align_corpus(config, pairs)
    aligner.export_pharaoh(alignments, args.export_pharaoh)
    print(f"aligned {len(alignments)} sentences -> {args.export_pharaoh}")
    return 0


def _cmd_count(args) -> int:
    source_vocab, target_vocab, sequences, _ = _wordized_key_pairs(args)
    alignments = list(aligner.import_alignments(args.alignments))
    if len(alignments) != len(sequences):
        raise ConfigError(
            f"{len(alignments)} alignment lines for {len(sequences)} sentence pairs"
        )
    triples = (
        (sequences[k][0], sequences[k][1], alignment)
        for k, alignment in enumerate(alignments)
    )
    counts = mapper.count_word_pairs(triples, source_vocab, target_vocab)
    mapper.export_counts_tsv(counts, source_vocab, target_vocab, args.out)
    print(f"{len(counts.counts)} word pairs -> {args.out}")
    return 0


def _cmd_map(args) -> int:
    source_vocab, _ = _load_tokenizer(args.source_vocab, None)
    target_vocab, _ = _load_tokenizer(args.target_vocab, None)
    counts = mapper.load_counts_tsv(args.counts, source_vocab, target_vocab)
    if not args.no_smoothing:
        extra = [tuple(p.split("=", 1)) for p in args.extra_pair]
        counts = mapper.add_smoothing(counts, source_vocab, target_vocab, extra)
    if args.threshold_stage == "words":
        counts = mapper.apply_threshold(counts, args.min_count)
        token_counts = mapper.split_to_tokens(counts, args.strategy)
        token_min = 0
    else:
        token_counts = mapper.split_to_tokens(counts, args.strategy)
        token_min = args.min_count
    mapping = mapper.normalize(
        token_counts, token_min, source_vocab=source_vocab, target_vocab=target_vocab,
        provenance={"strategy": args.strategy, "min_count": args.min_count,
                    "threshold_stage": args.threshold_stage})
    mapper.save_mapping(mapping, args.out)
    if args.readable:
        mapper.export_readable(mapping, source_vocab, target_vocab, args.readable)
    print(f"{len(mapping.rows)} mapped target tokens -> {args.out}")
    return 0


def _cmd_remap(args) -> int:
    mapping = mapper.load_mapping(args.mapping)
    fallback = {"mean": remapper.FALLBACK_MEAN, "zero": remapper.FALLBACK_ZERO,
                "error": remapper.FALLBACK_ERROR}[args.fallback]
    source = tensors.read_tensor(args.source_embeddings, args.embeddings_name)
    embeddings, report = remapper.remap_embeddings(source, mapping, fallback)
    embeddings.name = args.embeddings_name
    out_tables = [embeddings]
    reports = {"embeddings": report.to_dict()}
    if args.lm_head:
        head = tensors.read_tensor(args.lm_head, args.lm_head_name)
        remapped_head, head_report = remapper.remap_lm_head(head, mapping, fallback)
        remapped_head.name = args.lm_head_name
        reports["lm_head"] = head_report.to_dict()
        if args.lm_head_out:
            tensors.write_tensor(args.lm_head_out, [remapped_head])
        else:
            out_tables.append(remapped_head)
    tensors.write_tensor(args.out, out_tables)
    blob = json.dumps(reports, indent=1, sort_keys=True)
    if args.report:
        Path(args.report).write_text(blob + "\n", encoding="utf-8")
    else:
        print(blob)
    return 0


def _cmd_hydra(args) -> int:
    target_vocab = Vocab.load(args.target_vocab)
    embeddings_file, embeddings_name = args.embeddings.rsplit(":", 1)
    head_file, head_name = args.head.rsplit(":", 1)
    extras = []
    for spec in args.extra:
        vocab_path, tensor_path, name = spec.split(":", 2)
        extras.append((Vocab.load(vocab_path), tensors.read_tensor(tensor_path, name)))
    composition = compose(
        target_vocab,
        tensors.read_tensor(embeddings_file, embeddings_name),
        tensors.read_tensor(head_file, head_name),
        extras,
        mask_label=args.mask_label,
    )
    save_composition(composition, args.out_manifest, args.out_tensors)
    print(
        f"composed {composition.combined_vocab_size} input rows over "
        f"{len(composition.segments)} segments -> {args.out_manifest}"
    )
    return 0


def _cmd_ppl_normalize(args) -> int:
    value = normalize_perplexity(args.mean_loss, args.model_tokens, args.native_tokens)
    print(f"{value:.4f}")
    return 0


def _cmd_stats(args) -> int:
    mapping = mapper.load_mapping(args.mapping)
    source_vocab = Vocab.load(args.source_vocab) if args.source_vocab else None
    target_vocab = Vocab.load(args.target_vocab) if args.target_vocab else None
    stats = mapping_stats(mapping, source_vocab, target_vocab)
    per_token = stats.pop("per_token")
    if args.json:
        stats["per_token"] = per_token
        Path(args.json).write_text(
            json.dumps(stats, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        stats.pop("per_token")
    print(json.dumps(stats, indent=1, sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    config = PipelineConfig.from_file(args.config)
    overrides = {
        "out_dir": args.out_dir,
        "threads": args.threads,
        "max_pairs": args.max_pairs,
        "min_chars": args.min_chars,
        "max_chars": args.max_chars,
        "ratio_cap": args.ratio_cap,
        "min_count": args.min_count,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, value)
    result = run_pipeline(config)
    print(json.dumps({
        "out_dir": result.out_dir,
        "stages_run": result.stages_run,
        "stages_skipped": result.stages_skipped,
        "artifacts": result.artifacts,
        "stats": result.stats,
    }, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokmap",
        description="Evidence-based token mapping and embedding-table surgery",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="encode raw text, one sentence per line")
    p.add_argument("--vocab", required=True)
    p.add_argument("--merges")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("train-bpe", help="train a basic BPE tokenizer")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--vocab-size", type=int, required=True)
    p.add_argument("--style", choices=(WORD_START, CONTINUATION), default=WORD_START)
    p.add_argument("--marker", default="_")
    p.add_argument("--special", nargs="*", default=["<unk>", "<s>", "</s>"])
    p.add_argument("--ideographic", action="store_true")
    p.add_argument("--out-vocab", required=True)
    p.add_argument("--out-merges", required=True)
    p.set_defaults(func=_cmd_train_bpe)

    def add_corpus_args(p):
        p.add_argument("--corpus", required=True)
        _add_tokenizer_args(p, "source")
        _add_tokenizer_args(p, "target")
        p.add_argument("--pretokenized", action="store_true")
        p.add_argument("--max-pairs", type=int)
        p.add_argument("--min-chars", type=int, default=1)
        p.add_argument("--max-chars", type=int, default=4096)
        p.add_argument("--ratio-cap", type=float, default=9.0)

    p = sub.add_parser("align", help="train the aligner and export Pharaoh links")
    add_corpus_args(p)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--p0", type=float, default=0.08)
    p.add_argument("--lambda", type=float, default=4.0, dest="lambda")
    p.add_argument("--vb-alpha", type=float, default=0.01)
    p.add_argument("--no-optimize-lambda", action="store_true")
    p.add_argument("--sym", choices=("int", "union", "gdfa"), default="gdfa")
    p.add_argument("--direction", choices=("forward", "reverse", "both"), default="both")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--export-pharaoh", required=True)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("count", help="count word pairs from existing alignments")
    add_corpus_args(p)
    p.add_argument("--alignments", required=True, help="Pharaoh i-j file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_count)

    p = sub.add_parser("map", help="build the token mapping from word counts")
    p.add_argument("--counts", required=True)
    _add_tokenizer_args(p, "source")
    _add_tokenizer_args(p, "target")
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--threshold-stage", choices=("words", "tokens"), default="words")
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--extra-pair", action="append", default=[],
                   help="SOURCE=TARGET surface pair, repeatable")
    p.add_argument("--strategy", choices=("average", "all_to_all", "in_order"),
                   default="average")
    p.add_argument("--out", required=True)
    p.add_argument("--readable")
    p.set_defaults(func=_cmd_map)

    p = sub.add_parser("remap", help="apply a mapping to embeddings and LM head")
    p.add_argument("--source-embeddings", required=True)
    p.add_argument("--embeddings-name", default="embeddings")
    p.add_argument("--mapping", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fallback", choices=("mean", "zero", "error"), default="mean")
    p.add_argument("--lm-head")
    p.add_argument("--lm-head-name", default="lm_head")
    p.add_argument("--lm-head-out")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_remap)

    p = sub.add_parser("hydra", help="compose a multi-vocabulary artifact")
    p.add_argument("--target-vocab", required=True)
    p.add_argument("--embeddings", required=True, help="FILE:NAME")
    p.add_argument("--head", required=True, help="FILE:NAME")
    p.add_argument("--extra", action="append", default=[],
                   help="VOCAB:FILE:NAME, repeatable")
    p.add_argument("--mask-label", type=int, default=-100)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--out-tensors", required=True)
    p.set_defaults(func=_cmd_hydra)

    p = sub.add_parser("ppl-normalize", help="per-native-token perplexity")
    p.add_argument("--mean-loss", type=float, required=True)
    p.add_argument("--model-tokens", type=int, required=True)
    p.add_argument("--native-tokens", type=int, required=True)
    p.set_defaults(func=_cmd_ppl_normalize)

    p = sub.add_parser("stats", help="mapping diagnostics")
    p.add_argument("--mapping", required=True)
    p.add_argument("--source-vocab")
    p.add_argument("--target-vocab")
    p.add_argument("--json", help="write the full per-token report here")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("run", help="run the configured pipeline end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--min-chars", type=int)
    p.add_argument("--max-chars", type=int)
    p.add_argument("--ratio-cap", type=float)
    p.add_argument("--min-count", type=int)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except TokmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
