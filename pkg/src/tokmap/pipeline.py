"""End-to-end pipeline: corpus -> wordize -> align -> count -> map -> remap.

Every stage writes its artifact atomically and records a content-hash stamp;
reruns skip stages whose inputs, parameters, and outputs are unchanged, so
deleting one artifact recomputes only that stage and everything downstream.
Results are byte-identical for any thread count because work is sharded on a
fixed plan and partial results merge in shard order.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import aligner, hydra, mapper, remapper, tensors
from .analysis import mapping_stats
from .corpus import filter_pairs, read_pairs
from .errors import ConfigError, StageError, TokmapError
from .wordizer import (
    MergeRules,
    Vocab,
    Word,
    WordSequence,
    bpe_encode,
    remerge_words,
    _has_letter,
)

_FALLBACK_NAMES = {
    "mean": remapper.FALLBACK_MEAN,
    "zero": remapper.FALLBACK_ZERO,
    "error": remapper.FALLBACK_ERROR,
}
_SYM_NAMES = {
    "int": aligner.INTERSECTION,
    "union": aligner.UNION,
    "gdfa": aligner.GROW_DIAG_FINAL_AND,
}


@dataclass
class PipelineConfig:
    corpus: list
    source_vocab: str
    target_vocab: str
    source_merges: Optional[str] = None
    target_merges: Optional[str] = None
    pretokenized: bool = False
    out_dir: str = "out"
    max_pairs: Optional[int] = None
    min_chars: int = 1
    max_chars: int = 4096
    ratio_cap: float = 9.0
    iterations: int = 5
    p0: float = 0.08
    tension: float = 4.0
    vb_alpha: float = 0.01
    optimize_tension: bool = True
    direction: str = "both"          # forward | reverse | both
    symmetrization: str = "gdfa"     # int | union | gdfa
    export_pharaoh: bool = False
    min_count: int = 10
    threshold_stage: str = "words"   # words | tokens
    smoothing: bool = True
    extra_smoothing_pairs: list = field(default_factory=list)
    strategy: str = "average"        # average | all_to_all | in_order
    fallback: str = "mean"           # mean | zero | error
    source_embeddings: Optional[str] = None
    embeddings_name: str = "embeddings"
    lm_head: Optional[str] = None
    lm_head_name: str = "lm_head"
    hydra_extras: list = field(default_factory=list)  # [vocab_path, tensor_path, name]
    threads: int = 1
    shard_size: int = aligner.DEFAULT_SHARD_SIZE
    seed: int = 0  # reserved; the pipeline is deterministic end to end

    @staticmethod
    def from_file(path) -> "PipelineConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load config {path}: {exc}") from exc
        if isinstance(obj.get("corpus"), str):
            obj["corpus"] = [obj["corpus"]]
        known = {f for f in PipelineConfig.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return PipelineConfig(**obj)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def validate(self) -> None:
        if not self.corpus:
            raise ConfigError("at least one corpus file is required")
        for path in [self.corpus if isinstance(self.corpus, list) else [self.corpus]][0]:
            if not Path(path).is_file():
                raise ConfigError(f"corpus file not found: {path}")
        for label, path in (
            ("source_vocab", self.source_vocab),
            ("target_vocab", self.target_vocab),
            ("source_merges", self.source_merges),
            ("target_merges", self.target_merges),
            ("source_embeddings", self.source_embeddings),
            ("lm_head", self.lm_head),
        ):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")
        for extra in self.hydra_extras:
            if len(extra) != 3:
                raise ConfigError("hydra_extras entries are [vocab, tensor_file, name]")
            for path in extra[:2]:
                if not Path(path).is_file():
                    raise ConfigError(f"hydra extra file not found: {path}")
        if self.threads < 1:
            raise ConfigError("thread count must be >= 1")
        if not self.pretokenized and (self.source_merges is None or self.target_merges is None):
            raise ConfigError("raw-text corpora need source_merges and target_merges")
        if self.direction not in ("forward", "reverse", "both"):
            raise ConfigError(f"unknown direction {self.direction!r}")
        if self.symmetrization not in _SYM_NAMES:
            raise ConfigError(f"unknown symmetrization {self.symmetrization!r}")
        if self.threshold_stage not in ("words", "tokens"):
            raise ConfigError(f"unknown threshold_stage {self.threshold_stage!r}")
        if self.strategy not in (mapper.AVERAGE, mapper.ALL_TO_ALL, mapper.IN_ORDER):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.fallback not in _FALLBACK_NAMES:
            raise ConfigError(f"unknown fallback {self.fallback!r}")
        if self.hydra_extras and not self.source_embeddings:
            raise ConfigError("hydra composition needs source_embeddings to remap first")


@dataclass
class PipelineResult:
    out_dir: str
    stages_run: list = field(default_factory=list)
    stages_skipped: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


def _digest_bytes(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def _digest_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(payload: dict) -> str:
    return _digest_bytes(json.dumps(payload, sort_keys=True).encode("utf-8"))


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class _StageRunner:
    def __init__(self, out_dir: Path, result: PipelineResult):
        self.stamp_dir = out_dir / ".stamps"
        self.stamp_dir.mkdir(parents=True, exist_ok=True)
        self.result = result

    def fresh(self, stage: str, key: str, outputs: list) -> bool:
        stamp_path = self.stamp_dir / f"{stage}.json"
        if not stamp_path.is_file():
            return False
        try:
            stamp = json.loads(stamp_path.read_text(encoding="utf-8"))
        except ValueError:
            return False
        if stamp.get("key") != key:
            return False
        return all(Path(p).is_file() for p in outputs)

    def mark(self, stage: str, key: str, outputs: list) -> None:
        _atomic_write_text(
            self.stamp_dir / f"{stage}.json",
            json.dumps({"key": key, "outputs": [os.fspath(p) for p in outputs]}) + "\n",
        )


def _encode_pretokenized(text: str, vocab: Vocab, line_no: int, side: str) -> list:
    ids = []
    for surface in text.split():
        tid = vocab.id_of(surface)
        if tid is None:
            raise StageError(
                "wordize",
                f"line {line_no} ({side}): token {surface!r} not in vocabulary",
            )
        ids.append(tid)
    return ids


def _wordize_corpus(config: PipelineConfig, source_vocab, target_vocab,
                    source_merges, target_merges, cache_path: Path) -> None:
    lines = []
    for corpus_path in config.corpus:
        pairs = read_pairs(corpus_path, max_pairs=config.max_pairs)
        pairs = filter_pairs(pairs, config.min_chars, config.max_chars, config.ratio_cap)
        for pair in pairs:
            if config.pretokenized:
                src_ids = _encode_pretokenized(pair.source_text, source_vocab,
                                               pair.line_no, "source")
                tgt_ids = _encode_pretokenized(pair.target_text, target_vocab,
                                               pair.line_no, "target")
            else:
                src_ids = bpe_encode(pair.source_text, source_vocab, source_merges)
                tgt_ids = bpe_encode(pair.target_text, target_vocab, target_merges)
            src_groups = [list(w.token_ids) for w in remerge_words(src_ids, source_vocab).words]
            tgt_groups = [list(w.token_ids) for w in remerge_words(tgt_ids, target_vocab).words]
            lines.append(json.dumps([src_groups, tgt_groups], separators=(",", ":")))
    _atomic_write_text(cache_path, "\n".join(lines) + ("\n" if lines else ""))


def _sequence_from_groups(groups, vocab: Vocab) -> WordSequence:
    return WordSequence([
        Word(tuple(g), any(_has_letter(vocab.surface(t)) for t in g)) for g in groups
    ])


def _load_wordized(cache_path: Path, source_vocab: Vocab, target_vocab: Vocab):
    sequences = []
    with open(cache_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            src_groups, tgt_groups = json.loads(line)
            sequences.append((
                _sequence_from_groups(src_groups, source_vocab),
                _sequence_from_groups(tgt_groups, target_vocab),
            ))
    return sequences


def _align_corpus(config: PipelineConfig, key_pairs: list) -> list:
    params = aligner.DiagonalParams(config.tension, config.p0, config.vb_alpha)
    mode = _SYM_NAMES[config.symmetrization]
    forward = None
    reverse = None
    if config.direction in ("forward", "both"):
        fwd_params = aligner.DiagonalParams(config.tension, config.p0, config.vb_alpha)
        table = aligner.em_train(key_pairs, config.iterations, fwd_params,
                                 config.optimize_tension, config.threads,
                                 config.shard_size)
        forward = aligner.viterbi_align_corpus(key_pairs, table, fwd_params,
                                               config.threads, config.shard_size)
    if config.direction in ("reverse", "both"):
        flipped = [(tgt, src) for src, tgt in key_pairs]
        rev_params = aligner.DiagonalParams(config.tension, config.p0, config.vb_alpha)
        table = aligner.em_train(flipped, config.iterations, rev_params,
                                 config.optimize_tension, config.threads,
                                 config.shard_size)
        flipped_alignments = aligner.viterbi_align_corpus(flipped, table, rev_params,
                                                          config.threads, config.shard_size)
        reverse = []
        for alignment in flipped_alignments:
            transposed = aligner.SentenceAlignment(
                [], alignment.sentence_no,
                source_len=alignment.target_len, target_len=alignment.source_len,
            )
            transposed.links = sorted((j, i) for i, j in alignment.links)
            reverse.append(transposed)
    if config.direction == "forward":
        return forward
    if config.direction == "reverse":
        return reverse
    return [aligner.symmetrize(f, r, mode) for f, r in zip(forward, reverse)]


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Execute all configured stages; returns artifact paths and stage log."""
    config.validate()
    out_dir = Path(config.out_dir)
    cache_dir = out_dir / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    result = PipelineResult(out_dir=os.fspath(out_dir))
    runner = _StageRunner(out_dir, result)

    effective = asdict(config)
    _atomic_write_text(out_dir / "effective_config.json",
                       json.dumps(effective, indent=1, sort_keys=True) + "\n")

    try:
        source_vocab = Vocab.load(config.source_vocab)
        target_vocab = Vocab.load(config.target_vocab)
        source_merges = MergeRules.load(config.source_merges) if config.source_merges else MergeRules()
        target_merges = MergeRules.load(config.target_merges) if config.target_merges else MergeRules()
    except TokmapError as exc:
        raise StageError("load-tokenizers", str(exc)) from exc

    corpus_digests = [_digest_file(p) for p in config.corpus]

    # stage: wordize -------------------------------------------------------
    wordized_path = cache_dir / "wordized.jsonl"
    key_wordize = _stage_key({
        "stage": "wordize",
        "corpus": corpus_digests,
        "source_vocab": source_vocab.content_hash(),
        "target_vocab": target_vocab.content_hash(),
        "source_merges": _digest_file(config.source_merges) if config.source_merges else "",
        "target_merges": _digest_file(config.target_merges) if config.target_merges else "",
        "pretokenized": config.pretokenized,
        "max_pairs": config.max_pairs,
        "filter": [config.min_chars, config.max_chars, config.ratio_cap],
    })
    if runner.fresh("wordize", key_wordize, [wordized_path]):
        result.stages_skipped.append("wordize")
    else:
        try:
            _wordize_corpus(config, source_vocab, target_vocab,
                            source_merges, target_merges, wordized_path)
        except TokmapError as exc:
            raise StageError("wordize", str(exc)) from exc
        runner.mark("wordize", key_wordize, [wordized_path])
        result.stages_run.append("wordize")
    result.artifacts["wordized"] = os.fspath(wordized_path)

    sequences = _load_wordized(wordized_path, source_vocab, target_vocab)
    if not sequences:
        raise StageError("wordize", "no sentence pairs survived reading and filtering")
    key_pairs = [
        (src.word_keys(source_vocab), tgt.word_keys(target_vocab))
        for src, tgt in sequences
    ]
    result.stats["pair_count"] = len(sequences)

    # stage: align ----------------------------------------------------------
    links_path = cache_dir / "links.jsonl"
    pharaoh_path = out_dir / "alignments.pharaoh"
    key_align = _stage_key({
        "stage": "align",
        "upstream": key_wordize,
        "iterations": config.iterations,
        "p0": config.p0,
        "tension": config.tension,
        "vb_alpha": config.vb_alpha,
        "optimize_tension": config.optimize_tension,
        "direction": config.direction,
        "symmetrization": config.symmetrization,
        "shard_size": config.shard_size,
    })
    align_outputs = [links_path] + ([pharaoh_path] if config.export_pharaoh else [])
    if runner.fresh("align", key_align, align_outputs):
        result.stages_skipped.append("align")
        alignments = []
        with open(links_path, "r", encoding="utf-8") as fh:
            for no, line in enumerate(fh):
                links = [tuple(pair) for pair in json.loads(line)]
                src_seq, tgt_seq = sequences[no]
                alignment = aligner.SentenceAlignment(
                    [], no, source_len=len(src_seq.words), target_len=len(tgt_seq.words))
                alignment.links = links
                alignments.append(alignment)
    else:
        try:
            alignments = _align_corpus(config, key_pairs)
        except TokmapError as exc:
            raise StageError("align", str(exc)) from exc
        _atomic_write_text(links_path, "\n".join(
            json.dumps([list(l) for l in a.links], separators=(",", ":"))
            for a in alignments
        ) + ("\n" if alignments else ""))
        if config.export_pharaoh:
            aligner.export_pharaoh(alignments, pharaoh_path)
        runner.mark("align", key_align, align_outputs)
        result.stages_run.append("align")
    result.artifacts["links"] = os.fspath(links_path)
    if config.export_pharaoh:
        result.artifacts["pharaoh"] = os.fspath(pharaoh_path)

    # stage: count -----------------------------------------------------------
    counts_path = out_dir / "word_counts.tsv"
    key_count = _stage_key({"stage": "count", "upstream": key_align})
    if runner.fresh("count", key_count, [counts_path]):
        result.stages_skipped.append("count")
    else:
        try:
            triples = (
                (sequences[a.sentence_no][0], sequences[a.sentence_no][1], a)
                for a in alignments
            )
            word_counts = mapper.count_word_pairs(triples, source_vocab, target_vocab)
            mapper.export_counts_tsv(word_counts, source_vocab, target_vocab, counts_path)
        except TokmapError as exc:
            raise StageError("count", str(exc)) from exc
        runner.mark("count", key_count, [counts_path])
        result.stages_run.append("count")
    result.artifacts["word_counts"] = os.fspath(counts_path)

    # stage: map --------------------------------------------------------------
    mapping_path = out_dir / "mapping.json"
    readable_path = out_dir / "mapping.txt"
    key_map = _stage_key({
        "stage": "map",
        "upstream": key_count,
        "min_count": config.min_count,
        "threshold_stage": config.threshold_stage,
        "smoothing": config.smoothing,
        "extra_pairs": sorted(map(list, config.extra_smoothing_pairs)),
        "strategy": config.strategy,
    })
    if runner.fresh("map", key_map, [mapping_path, readable_path]):
        result.stages_skipped.append("map")
        mapping = mapper.load_mapping(mapping_path)
    else:
        try:
            word_counts = mapper.load_counts_tsv(counts_path, source_vocab, target_vocab)
            if config.smoothing:
                word_counts = mapper.add_smoothing(
                    word_counts, source_vocab, target_vocab,
                    [tuple(p) for p in config.extra_smoothing_pairs])
            if config.threshold_stage == "words":
                word_counts = mapper.apply_threshold(word_counts, config.min_count)
                token_counts = mapper.split_to_tokens(word_counts, config.strategy)
                token_min = 0
            else:
                token_counts = mapper.split_to_tokens(word_counts, config.strategy)
                token_min = config.min_count
            mapping = mapper.normalize(
                token_counts, token_min,
                source_vocab=source_vocab, target_vocab=target_vocab,
                provenance={
                    "strategy": config.strategy,
                    "min_count": config.min_count,
                    "threshold_stage": config.threshold_stage,
                    "smoothing": config.smoothing,
                    "direction": config.direction,
                    "symmetrization": config.symmetrization,
                })
            mapper.save_mapping(mapping, mapping_path)
            mapper.export_readable(mapping, source_vocab, target_vocab, readable_path)
        except TokmapError as exc:
            raise StageError("map", str(exc)) from exc
        runner.mark("map", key_map, [mapping_path, readable_path])
        result.stages_run.append("map")
    result.artifacts["mapping"] = os.fspath(mapping_path)
    result.artifacts["mapping_readable"] = os.fspath(readable_path)
    result.stats["mapped_tokens"] = len(mapping.rows)

    # stage: remap -------------------------------------------------------------
    if config.source_embeddings:
        remapped_path = out_dir / "remapped.tensors"
        report_path = out_dir / "remap_report.json"
        key_remap = _stage_key({
            "stage": "remap",
            "upstream": key_map,
            "embeddings": _digest_file(config.source_embeddings),
            "embeddings_name": config.embeddings_name,
            "lm_head": _digest_file(config.lm_head) if config.lm_head else "",
            "lm_head_name": config.lm_head_name,
            "fallback": config.fallback,
        })
        if runner.fresh("remap", key_remap, [remapped_path, report_path]):
            result.stages_skipped.append("remap")
        else:
            try:
                fallback = _FALLBACK_NAMES[config.fallback]
                source_table = tensors.read_tensor(config.source_embeddings,
                                                   config.embeddings_name)
                embeddings, report = remapper.remap_embeddings(
                    source_table, mapping, fallback, target_vocab)
                embeddings.name = "embeddings"
                out_tables = [embeddings]
                reports = {"embeddings": report.to_dict()}
                if config.lm_head:
                    head_table = tensors.read_tensor(config.lm_head, config.lm_head_name)
                    head, head_report = remapper.remap_lm_head(
                        head_table, mapping, fallback, target_vocab)
                    head.name = "lm_head"
                    out_tables.append(head)
                    reports["lm_head"] = head_report.to_dict()
                tensors.write_tensor(remapped_path, out_tables)
                _atomic_write_text(report_path,
                                   json.dumps(reports, indent=1, sort_keys=True) + "\n")
            except TokmapError as exc:
                raise StageError("remap", str(exc)) from exc
            runner.mark("remap", key_remap, [remapped_path, report_path])
            result.stages_run.append("remap")
        result.artifacts["remapped"] = os.fspath(remapped_path)
        result.artifacts["remap_report"] = os.fspath(report_path)

        # stage: hydra ----------------------------------------------------------
        if config.hydra_extras:
            manifest_path = out_dir / "hydra_manifest.json"
            hydra_tensors_path = out_dir / "hydra.tensors"
            key_hydra = _stage_key({
                "stage": "hydra",
                "upstream": key_remap,
                "extras": [[_digest_file(v), _digest_file(t), name]
                           for v, t, name in config.hydra_extras],
            })
            if runner.fresh("hydra", key_hydra, [manifest_path, hydra_tensors_path]):
                result.stages_skipped.append("hydra")
            else:
                try:
                    stored = tensors.read_all_tensors(remapped_path)
                    target_embeddings = stored["embeddings"]
                    target_head = stored.get("lm_head", stored["embeddings"])
                    extras = []
                    for vocab_path, tensor_path, name in config.hydra_extras:
                        extras.append((Vocab.load(vocab_path),
                                       tensors.read_tensor(tensor_path, name)))
                    composition = hydra.compose(target_vocab, target_embeddings,
                                                target_head, extras)
                    hydra.save_composition(composition, manifest_path,
                                           hydra_tensors_path)
                except TokmapError as exc:
                    raise StageError("hydra", str(exc)) from exc
                runner.mark("hydra", key_hydra, [manifest_path, hydra_tensors_path])
                result.stages_run.append("hydra")
            result.artifacts["hydra_manifest"] = os.fspath(manifest_path)
            result.artifacts["hydra_tensors"] = os.fspath(hydra_tensors_path)

    stats_payload = mapping_stats(mapping, source_vocab, target_vocab)
    stats_payload.pop("per_token", None)
    result.stats["mapping"] = stats_payload
    return result
