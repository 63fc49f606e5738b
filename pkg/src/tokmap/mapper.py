"""From word-level alignment links to a per-token probabilistic mapping.

The chain is: count linked word pairs, add plus-one smoothing for pairs that
need no corpus evidence (identical surfaces, special tokens, user-supplied),
drop rare pairs, split word-pair counts onto the tokens of each word with the
all-to-all and in-order strategies (averaged by default), and normalize each
target token's counts into weights.

Per-word-pair split arithmetic runs on exact rationals so that integer counts
produce exact contributions; accumulation across word pairs is double
precision.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import MapperError
from .wordizer import KEY_SEP, Vocab, key_surfaces, parse_word_display, word_display

logger = logging.getLogger(__name__)

DEFAULT_MIN_COUNT = 10

ALL_TO_ALL = "all_to_all"
IN_ORDER = "in_order"
AVERAGE = "average"
_STRATEGIES = (ALL_TO_ALL, IN_ORDER, AVERAGE)

# Same-role special tokens align to each other even across naming conventions.
_SPECIAL_ROLES = {
    "<s>": "bos", "<bos>": "bos", "<|startoftext|>": "bos",
    "</s>": "eos", "<eos>": "eos", "<|endoftext|>": "eos",
    "[CLS]": "cls", "<cls>": "cls",
    "[SEP]": "sep", "<sep>": "sep",
    "<unk>": "unk", "[UNK]": "unk",
    "<pad>": "pad", "[PAD]": "pad",
    "<mask>": "mask", "[MASK]": "mask",
}


@dataclass
class WordPairCounts:
    """count(source word, target word) plus each word key's token ids."""

    counts: dict = field(default_factory=dict)          # (src_key, tgt_key) -> float
    source_words: dict = field(default_factory=dict)    # key -> tuple of token ids
    target_words: dict = field(default_factory=dict)
    smoothed_mass: dict = field(default_factory=dict)   # pair -> mass added by smoothing

    def total(self) -> float:
        return math.fsum(self.counts.values())

    def add(self, src_key: str, src_ids, tgt_key: str, tgt_ids, count: float = 1.0,
            smoothing: bool = False) -> None:
        if not src_ids or not tgt_ids:
            raise MapperError(f"zero-token word in pair ({src_key!r}, {tgt_key!r})")
        self.source_words.setdefault(src_key, tuple(src_ids))
        self.target_words.setdefault(tgt_key, tuple(tgt_ids))
        pair = (src_key, tgt_key)
        self.counts[pair] = self.counts.get(pair, 0.0) + count
        if smoothing:
            self.smoothed_mass[pair] = self.smoothed_mass.get(pair, 0.0) + count


@dataclass
class TokenAlignmentCounts:
    """count(target token, source token) after splitting word pairs."""

    counts: dict = field(default_factory=dict)   # (tgt_id, src_id) -> float
    smoothed: set = field(default_factory=set)   # pairs with any smoothing evidence

    def total(self) -> float:
        return math.fsum(self.counts.values())


@dataclass
class TokenMapping:
    """Per-target-token distribution over source tokens (weights sum to 1)."""

    rows: dict = field(default_factory=dict)       # tgt_id -> [(src_id, weight)] asc src_id
    unmapped: set = field(default_factory=set)     # tgt ids whose counts were all filtered
    smoothed_only: set = field(default_factory=set)
    provenance: dict = field(default_factory=dict)
    source_vocab_hash: str = ""
    target_vocab_hash: str = ""
    source_vocab_size: int = 0
    target_vocab_size: int = 0

    def validate(self, tolerance: float = 1e-9) -> None:
        for tgt_id, row in self.rows.items():
            if not row:
                raise MapperError(f"empty mapping row for target token {tgt_id}")
            weight_sum = math.fsum(w for _, w in row)
            if abs(weight_sum - 1.0) > tolerance:
                raise MapperError(
                    f"mapping row {tgt_id} sums to {weight_sum!r}, expected 1"
                )
            for src_id, w in row:
                if w <= 0:
                    raise MapperError(f"nonpositive weight in row {tgt_id}")
                if self.source_vocab_size and not (0 <= src_id < self.source_vocab_size):
                    raise MapperError(f"source id {src_id} out of vocab in row {tgt_id}")
            if self.target_vocab_size and not (0 <= tgt_id < self.target_vocab_size):
                raise MapperError(f"target id {tgt_id} out of vocab")


def count_word_pairs(
    alignments: Iterable,
    source_vocab: Vocab,
    target_vocab: Vocab,
) -> WordPairCounts:
    """Tally one count per link over (source WordSequence, target WordSequence,
    SentenceAlignment) triples. Unlinked words contribute nothing."""
    counts = WordPairCounts()
    for src_seq, tgt_seq, alignment in alignments:
        src_keys = src_seq.word_keys(source_vocab)
        tgt_keys = tgt_seq.word_keys(target_vocab)
        for i, j in alignment.links:
            if not (1 <= i <= len(src_keys)) or not (1 <= j <= len(tgt_keys)):
                raise MapperError(
                    f"sentence {alignment.sentence_no}: link ({i},{j}) out of bounds "
                    f"for {len(src_keys)}x{len(tgt_keys)} words"
                )
            counts.add(
                src_keys[i - 1], src_seq.words[i - 1].token_ids,
                tgt_keys[j - 1], tgt_seq.words[j - 1].token_ids,
            )
    return counts


def apply_threshold(counts, min_count: float, exempt_smoothed: bool = True):
    """Drop entries with count strictly below min_count (same type out).

    Entries that received smoothing mass are exempt when the flag is set,
    otherwise plus-one smoothing would be a no-op for any min_count > 1.
    """
    if min_count < 0:
        raise MapperError("min_count must be nonnegative")
    if isinstance(counts, WordPairCounts):
        kept = {
            pair: c for pair, c in counts.counts.items()
            if c >= min_count or (exempt_smoothed and pair in counts.smoothed_mass)
        }
        src_keys = {pair[0] for pair in kept}
        tgt_keys = {pair[1] for pair in kept}
        return WordPairCounts(
            counts=kept,
            source_words={k: v for k, v in counts.source_words.items() if k in src_keys},
            target_words={k: v for k, v in counts.target_words.items() if k in tgt_keys},
            smoothed_mass={p: m for p, m in counts.smoothed_mass.items() if p in kept},
        )
    if isinstance(counts, TokenAlignmentCounts):
        kept = {
            pair: c for pair, c in counts.counts.items()
            if c >= min_count or (exempt_smoothed and pair in counts.smoothed)
        }
        return TokenAlignmentCounts(
            counts=kept,
            smoothed={p for p in counts.smoothed if p in kept},
        )
    raise MapperError(f"cannot threshold {type(counts).__name__}")


def _normalized_surface(vocab: Vocab, token_id: int) -> str:
    return vocab.strip_marker(vocab.surface(token_id))


def add_smoothing(
    counts: WordPairCounts,
    source_vocab: Vocab,
    target_vocab: Vocab,
    extra_pairs: Sequence = (),
) -> WordPairCounts:
    """Plus-one smoothing for predefined single-token pairs.

    Pairs come from (i) identical surfaces after marker normalization (exact
    surface matches take precedence), (ii) same-role special tokens, and
    (iii) user-supplied (source surface, target surface) pairs. Each selected
    pair's count is incremented by one, creating the entry when absent.
    """
    out = WordPairCounts(
        counts=dict(counts.counts),
        source_words=dict(counts.source_words),
        target_words=dict(counts.target_words),
        smoothed_mass=dict(counts.smoothed_mass),
    )

    by_norm = defaultdict(list)
    for sid, surface in enumerate(source_vocab.id_to_token):
        by_norm[_normalized_surface(source_vocab, sid)].append(sid)

    def smooth(src_id: int, tgt_id: int) -> None:
        src_surf = source_vocab.surface(src_id)
        tgt_surf = target_vocab.surface(tgt_id)
        out.add(src_surf, (src_id,), tgt_surf, (tgt_id,), 1.0, smoothing=True)

    for tid, tgt_surf in enumerate(target_vocab.id_to_token):
        exact = source_vocab.id_of(tgt_surf)
        if exact is not None:
            smooth(exact, tid)
            continue
        for sid in by_norm.get(_normalized_surface(target_vocab, tid), ()):
            smooth(sid, tid)

    src_roles = {}
    for sid in sorted(source_vocab.special_tokens):
        role = _SPECIAL_ROLES.get(source_vocab.surface(sid))
        if role is not None and role not in src_roles:
            src_roles[role] = sid
    user_targets = {pair[1] for pair in extra_pairs}
    for tid in sorted(target_vocab.special_tokens):
        tgt_surf = target_vocab.surface(tid)
        if source_vocab.id_of(tgt_surf) is not None:
            continue  # already handled by the identical-surface rule
        role = _SPECIAL_ROLES.get(tgt_surf)
        if role is not None and role in src_roles:
            smooth(src_roles[role], tid)
        elif tgt_surf not in user_targets:
            logger.warning(
                "special token %r has no counterpart in the source vocabulary",
                tgt_surf,
            )

    for src_surf, tgt_surf in extra_pairs:
        sid = source_vocab.id_of(src_surf)
        tid = target_vocab.id_of(tgt_surf)
        if sid is None or tid is None:
            raise MapperError(
                f"smoothing pair ({src_surf!r}, {tgt_surf!r}) references unknown tokens"
            )
        smooth(sid, tid)
    return out


def _in_order_cells(count: Fraction, tgt_ids, src_ids):
    """In-order split: token index intervals on [0,1) matched by overlap."""
    n_tgt = len(tgt_ids)
    n_src = len(src_ids)
    for t in range(n_tgt):
        t_lo = Fraction(t, n_tgt)
        t_hi = Fraction(t + 1, n_tgt)
        for s in range(n_src):
            s_lo = Fraction(s, n_src)
            s_hi = Fraction(s + 1, n_src)
            overlap = min(t_hi, s_hi) - max(t_lo, s_lo)
            if overlap > 0:
                yield (tgt_ids[t], src_ids[s]), count * n_tgt * overlap


def split_to_tokens(counts: WordPairCounts, strategy: str = AVERAGE) -> TokenAlignmentCounts:
    """Distribute each word pair's count onto its token pairs.

    all_to_all gives every (target token, source token) cell count/S so each
    target token receives the full count; in_order matches relative positions
    and also hands each target token the full count; average combines both.
    """
    if strategy not in _STRATEGIES:
        raise MapperError(f"unknown split strategy {strategy!r}")
    out = TokenAlignmentCounts()
    for (src_key, tgt_key), count in counts.counts.items():
        src_ids = counts.source_words.get(src_key)
        tgt_ids = counts.target_words.get(tgt_key)
        if not src_ids or not tgt_ids:
            raise MapperError(f"missing token decomposition for ({src_key!r}, {tgt_key!r})")
        count_frac = Fraction(count)
        cells = defaultdict(Fraction)
        if strategy in (ALL_TO_ALL, AVERAGE):
            share = count_frac / len(src_ids)
            for t in tgt_ids:
                for s in src_ids:
                    cells[(t, s)] += share
        if strategy in (IN_ORDER, AVERAGE):
            for cell, contribution in _in_order_cells(count_frac, tgt_ids, src_ids):
                cells[cell] += contribution
        divisor = 2 if strategy == AVERAGE else 1
        smoothed = (src_key, tgt_key) in counts.smoothed_mass
        for cell, contribution in cells.items():
            out.counts[cell] = out.counts.get(cell, 0.0) + float(contribution / divisor)
            if smoothed:
                out.smoothed.add(cell)
    return out


def normalize(
    counts: TokenAlignmentCounts,
    min_count: float = 0,
    exempt_smoothed: bool = True,
    source_vocab: Optional[Vocab] = None,
    target_vocab: Optional[Vocab] = None,
    provenance: Optional[dict] = None,
) -> TokenMapping:
    """Threshold token counts, then divide each target token's counts by their
    sum. Target tokens whose counts all fell below the threshold are recorded
    as unmapped."""
    filtered = apply_threshold(counts, min_count, exempt_smoothed) if min_count > 0 else counts
    by_target = defaultdict(dict)
    for (tgt_id, src_id), c in filtered.counts.items():
        if c > 0:
            by_target[tgt_id][src_id] = c
    seen_targets = {tgt_id for tgt_id, _ in counts.counts}

    mapping = TokenMapping(provenance=dict(provenance or {}))
    for tgt_id in sorted(by_target):
        row = by_target[tgt_id]
        total = math.fsum(row.values())
        mapping.rows[tgt_id] = [(src_id, row[src_id] / total) for src_id in sorted(row)]
        if all((tgt_id, src_id) in filtered.smoothed for src_id in row):
            mapping.smoothed_only.add(tgt_id)
    mapping.unmapped = seen_targets - set(mapping.rows)
    if source_vocab is not None:
        mapping.source_vocab_hash = source_vocab.content_hash()
        mapping.source_vocab_size = len(source_vocab)
    if target_vocab is not None:
        mapping.target_vocab_hash = target_vocab.content_hash()
        mapping.target_vocab_size = len(target_vocab)
    mapping.validate()
    return mapping


@dataclass
class MappingBundle:
    """Several mappings over distinct source vocabularies, same target."""

    mappings: list
    coverage: dict   # tgt_id -> number of mappings providing a row


def merge_mappings(mappings: Sequence) -> MappingBundle:
    """Bundle mappings sharing a target vocabulary and report coverage."""
    if not mappings:
        raise MapperError("no mappings to merge")
    first = mappings[0]
    for other in mappings[1:]:
        if (first.target_vocab_hash and other.target_vocab_hash
                and first.target_vocab_hash != other.target_vocab_hash):
            raise MapperError("mappings target different vocabularies")
        if (first.target_vocab_size and other.target_vocab_size
                and first.target_vocab_size != other.target_vocab_size):
            raise MapperError("mappings disagree on target vocabulary size")
    coverage = defaultdict(int)
    for mapping in mappings:
        for tgt_id in mapping.rows:
            coverage[tgt_id] += 1
    return MappingBundle(list(mappings), dict(coverage))


# --- serialization ----------------------------------------------------------

def mapping_to_dict(mapping: TokenMapping) -> dict:
    return {
        "source_vocab_hash": mapping.source_vocab_hash,
        "target_vocab_hash": mapping.target_vocab_hash,
        "source_vocab_size": mapping.source_vocab_size,
        "target_vocab_size": mapping.target_vocab_size,
        "rows": {
            str(tgt_id): [[src_id, w] for src_id, w in mapping.rows[tgt_id]]
            for tgt_id in sorted(mapping.rows)
        },
        "unmapped": sorted(mapping.unmapped),
        "smoothed_only": sorted(mapping.smoothed_only),
        "provenance": mapping.provenance,
    }


def mapping_from_dict(obj: dict) -> TokenMapping:
    try:
        mapping = TokenMapping(
            rows={
                int(tgt_id): [(int(s), float(w)) for s, w in row]
                for tgt_id, row in obj["rows"].items()
            },
            unmapped=set(obj.get("unmapped", ())),
            smoothed_only=set(obj.get("smoothed_only", ())),
            provenance=dict(obj.get("provenance", {})),
            source_vocab_hash=obj.get("source_vocab_hash", ""),
            target_vocab_hash=obj.get("target_vocab_hash", ""),
            source_vocab_size=int(obj.get("source_vocab_size", 0)),
            target_vocab_size=int(obj.get("target_vocab_size", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MapperError(f"malformed mapping object: {exc}") from exc
    mapping.validate()
    return mapping


def save_mapping(mapping: TokenMapping, path) -> None:
    """Canonical JSON, written atomically; identical mappings yield identical bytes."""
    blob = json.dumps(mapping_to_dict(mapping), ensure_ascii=False,
                      separators=(",", ":"))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(blob + "\n", encoding="utf-8")
    os.replace(tmp, path)


def load_mapping(path) -> TokenMapping:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise MapperError(f"cannot load mapping {path}: {exc}") from exc
    return mapping_from_dict(obj)


def export_readable(
    mapping: TokenMapping,
    source_vocab: Vocab,
    target_vocab: Vocab,
    path,
    precision: int = 2,
) -> None:
    """Human-readable rows, heaviest sources first:
    ``_vijftien := 0.52*_fifteen + 0.46*_15 + ...``"""
    lines = []
    for tgt_id in sorted(mapping.rows):
        row = sorted(mapping.rows[tgt_id], key=lambda e: (-e[1], e[0]))
        rhs = " + ".join(
            f"{w:.{precision}f}*{source_vocab.surface(s)}" for s, w in row
        )
        lines.append(f"{target_vocab.surface(tgt_id)} := {rhs}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format_count(c: float) -> str:
    return str(int(c)) if float(c).is_integer() else repr(c)


def export_counts_tsv(counts: WordPairCounts, source_vocab: Vocab,
                      target_vocab: Vocab, path) -> None:
    """``count<TAB>target_word<TAB>source_word`` rows, continuation shown as ##."""
    src_style = source_vocab.marker_style
    tgt_style = target_vocab.marker_style
    lines = []
    for (src_key, tgt_key) in sorted(counts.counts, key=lambda p: (-counts.counts[p], p)):
        c = counts.counts[(src_key, tgt_key)]
        tgt_disp = word_display(key_surfaces(tgt_key), tgt_style)
        src_disp = word_display(key_surfaces(src_key), src_style)
        lines.append(f"{_format_count(c)}\t{tgt_disp}\t{src_disp}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_counts_tsv(path, source_vocab: Vocab, target_vocab: Vocab) -> WordPairCounts:
    counts = WordPairCounts()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MapperError(f"cannot read counts {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MapperError(f"{path}:{line_no}: expected 3 tab-separated fields")
        try:
            count = float(parts[0])
        except ValueError as exc:
            raise MapperError(f"{path}:{line_no}: bad count {parts[0]!r}") from exc
        tgt_ids = parse_word_display(parts[1], target_vocab)
        src_ids = parse_word_display(parts[2], source_vocab)
        src_key = KEY_SEP.join(source_vocab.surface(i) for i in src_ids)
        tgt_key = KEY_SEP.join(target_vocab.surface(i) for i in tgt_ids)
        counts.add(src_key, src_ids, tgt_key, tgt_ids, count)
    return counts
