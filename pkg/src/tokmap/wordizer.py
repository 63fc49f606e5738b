"""Vocabularies, BPE encoding and training, and subword-to-word re-merging.

Two marker conventions are supported: a word-start prefix (tokens carrying the
marker begin a word, e.g. ``_token``) and a continuation prefix (tokens
carrying the marker extend the previous one, e.g. ``##izer``). Word boundaries
for re-merging additionally use the unicode Letter class: tokens without any
letter never merge, and nothing merges across them.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import EncodingError, VocabError

WORD_START = "word_start"
CONTINUATION = "continuation"

# Joiner for canonical word keys (token surfaces of one word fused into a
# single opaque string). U+001F cannot occur in token surfaces.
KEY_SEP = "\x1f"

DEFAULT_SPECIALS = ("<unk>", "<s>", "</s>")


@dataclass(frozen=True)
class MarkerStyle:
    kind: str
    marker: str

    def __post_init__(self):
        if self.kind not in (WORD_START, CONTINUATION):
            raise VocabError(f"unknown marker style kind: {self.kind!r}")
        if not self.marker:
            raise VocabError("marker string must be nonempty")
        if any(unicodedata.category(c).startswith("L") for c in self.marker):
            raise VocabError("marker must not contain letter characters")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "marker": self.marker}

    @staticmethod
    def from_dict(obj: dict) -> "MarkerStyle":
        return MarkerStyle(obj["kind"], obj["marker"])


@dataclass
class Vocab:
    """Dense id <-> surface table with a marker convention and special ids."""

    id_to_token: list[str]
    marker_style: MarkerStyle
    special_tokens: frozenset = frozenset()
    ideographic_mode: bool = False
    token_to_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.special_tokens = frozenset(self.special_tokens)
        self.token_to_id = {}
        for i, tok in enumerate(self.id_to_token):
            if not tok:
                raise VocabError(f"empty token surface at id {i}")
            if KEY_SEP in tok or "\x00" in tok:
                raise VocabError(f"reserved control character in token {tok!r}")
            if tok in self.token_to_id:
                raise VocabError(f"duplicate token surface {tok!r}")
            self.token_to_id[tok] = i
        for sid in self.special_tokens:
            if not (0 <= sid < len(self.id_to_token)):
                raise VocabError(f"special token id {sid} out of range")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def surface(self, token_id: int) -> str:
        if not (0 <= token_id < len(self.id_to_token)):
            raise VocabError(f"token id {token_id} out of range 0..{len(self) - 1}")
        return self.id_to_token[token_id]

    def id_of(self, surface: str) -> Optional[int]:
        return self.token_to_id.get(surface)

    def begins_word(self, surface: str) -> bool:
        """Marker rule only: does this surface start a new word?"""
        if self.marker_style.kind == WORD_START:
            return surface.startswith(self.marker_style.marker)
        return not surface.startswith(self.marker_style.marker)

    def strip_marker(self, surface: str) -> str:
        marker = self.marker_style.marker
        if surface.startswith(marker):
            return surface[len(marker):]
        return surface

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.id_to_token),
            "marker_style": self.marker_style.to_dict(),
            "special_tokens": sorted(self.special_tokens),
            "ideographic": self.ideographic_mode,
        }

    @staticmethod
    def from_dict(obj: dict) -> "Vocab":
        try:
            return Vocab(
                list(obj["tokens"]),
                MarkerStyle.from_dict(obj["marker_style"]),
                frozenset(obj.get("special_tokens", ())),
                bool(obj.get("ideographic", False)),
            )
        except (KeyError, TypeError) as exc:
            raise VocabError(f"malformed vocab object: {exc}") from exc

    def save(self, path) -> None:
        blob = json.dumps(self.to_dict(), ensure_ascii=False, indent=1)
        Path(path).write_text(blob + "\n", encoding="utf-8")

    @staticmethod
    def load(path) -> "Vocab":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise VocabError(f"cannot load vocab {path}: {exc}") from exc
        return Vocab.from_dict(obj)


class MergeRules:
    """Ordered BPE merges; priority is list position (lower applies first)."""

    def __init__(self, pairs: Sequence = ()):
        self.pairs: list = [(left, right) for left, right in pairs]
        self._ranks = {pair: rank for rank, pair in enumerate(self.pairs)}

    def __len__(self) -> int:
        return len(self.pairs)

    def rank(self, left: str, right: str) -> Optional[int]:
        return self._ranks.get((left, right))

    def validate(self, vocab: Vocab) -> None:
        for left, right in self.pairs:
            merged = merge_surfaces(left, right, vocab.marker_style)
            if merged not in vocab.token_to_id:
                raise VocabError(f"merge ({left!r},{right!r}) -> {merged!r} not in vocab")

    def save(self, path) -> None:
        lines = [f"{left} {right}" for left, right in self.pairs]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @staticmethod
    def load(path) -> "MergeRules":
        pairs = []
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise VocabError(f"cannot load merges {path}: {exc}") from exc
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise VocabError(f"{path}:{line_no}: malformed merge line {line!r}")
            pairs.append((parts[0], parts[1]))
        return MergeRules(pairs)


def merge_surfaces(left: str, right: str, style: MarkerStyle) -> str:
    """Surface of the token produced by merging two adjacent tokens."""
    if style.kind == CONTINUATION and right.startswith(style.marker):
        return left + right[len(style.marker):]
    return left + right


@dataclass(frozen=True)
class Word:
    token_ids: tuple
    is_letter_word: bool

    def __post_init__(self):
        if not self.token_ids:
            raise VocabError("word must contain at least one token")


@dataclass
class WordSequence:
    words: list

    def flatten(self) -> list:
        out = []
        for word in self.words:
            out.extend(word.token_ids)
        return out

    def word_keys(self, vocab: Vocab) -> list:
        return [
            KEY_SEP.join(vocab.surface(t) for t in word.token_ids) for word in self.words
        ]


def key_surfaces(key: str) -> list:
    """Token surfaces of a canonical word key."""
    return key.split(KEY_SEP)


def _has_letter(text: str) -> bool:
    return any(unicodedata.category(c).startswith("L") for c in text)


def remerge_words(token_ids: Sequence, vocab: Vocab) -> WordSequence:
    """Group a token stream back into word units.

    A token starts a new word when the marker convention says so, when its
    surface contains no unicode Letter, when the previous token contained no
    Letter (or was a special token), or always in ideographic mode. Special
    tokens are standalone units.
    """
    words = []
    current: list = []
    current_any_letter = False
    prev_breaks = True  # previous token was letterless/special, or start of stream
    for tid in token_ids:
        surface = vocab.surface(tid)
        is_special = tid in vocab.special_tokens
        has_letter = _has_letter(surface)
        starts = (
            vocab.ideographic_mode
            or is_special
            or prev_breaks
            or vocab.begins_word(surface)
            or not has_letter
        )
        if starts and current:
            words.append(Word(tuple(current), current_any_letter))
            current = []
            current_any_letter = False
        current.append(tid)
        current_any_letter = current_any_letter or has_letter
        prev_breaks = is_special or not has_letter
    if current:
        words.append(Word(tuple(current), current_any_letter))
    return WordSequence(words)


def to_word_keys(token_ids: Sequence, vocab: Vocab) -> list:
    """Convenience: remerge then render canonical word keys."""
    return remerge_words(token_ids, vocab).word_keys(vocab)


def convert_marker_style(vocab: Vocab, new_style: MarkerStyle) -> Vocab:
    """Mechanically re-express a vocabulary in the other marker convention.

    Word-start tokens lose/gain the word-start marker; continuation tokens
    gain/lose the continuation marker. Special tokens are left untouched.
    """
    if new_style.kind == vocab.marker_style.kind:
        return Vocab(
            list(vocab.id_to_token),
            new_style,
            vocab.special_tokens,
            vocab.ideographic_mode,
        )
    # Either direction: marked tokens lose the old marker, unmarked gain the
    # new one (what "begins a word" means flips with the style).
    old_marker = vocab.marker_style.marker
    surfaces = []
    for tid, surface in enumerate(vocab.id_to_token):
        if tid in vocab.special_tokens:
            surfaces.append(surface)
        elif surface.startswith(old_marker):
            surfaces.append(surface[len(old_marker):])
        else:
            surfaces.append(new_style.marker + surface)
    return Vocab(surfaces, new_style, vocab.special_tokens, vocab.ideographic_mode)


# --- pretokenization -------------------------------------------------------

def pretokenize(text: str):
    """Split text into (unit, preceded_by_space) atoms.

    Units are maximal Letter runs, maximal decimal-digit runs, or single other
    non-space characters. The flag is True at start of text and after any
    whitespace, so the word-start marker lands exactly where a new word begins.
    """
    units = []
    i = 0
    n = len(text)
    preceded = True
    while i < n:
        ch = text[i]
        cat = unicodedata.category(ch)
        if ch.isspace():
            preceded = True
            i += 1
            continue
        if cat.startswith("L"):
            j = i + 1
            while j < n and unicodedata.category(text[j]).startswith("L"):
                j += 1
        elif cat == "Nd":
            j = i + 1
            while j < n and unicodedata.category(text[j]) == "Nd":
                j += 1
        else:
            j = i + 1
        units.append((text[i:j], preceded))
        preceded = False
        i = j
    return units


def _unit_symbols(unit: str, preceded_by_space: bool, style: MarkerStyle) -> list:
    chars = list(unit)
    if style.kind == WORD_START:
        if preceded_by_space:
            return [style.marker + chars[0]] + chars[1:]
        return chars
    return [chars[0]] + [style.marker + c for c in chars[1:]]


def _apply_merges(symbols: list, merges: MergeRules, style: MarkerStyle) -> list:
    """Apply merges until none fits: lowest rank first, leftmost on rank ties."""
    symbols = list(symbols)
    while len(symbols) > 1:
        best_rank = None
        best_pos = -1
        for pos in range(len(symbols) - 1):
            rank = merges.rank(symbols[pos], symbols[pos + 1])
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
                best_pos = pos
        if best_rank is None:
            break
        merged = merge_surfaces(symbols[best_pos], symbols[best_pos + 1], style)
        symbols[best_pos:best_pos + 2] = [merged]
    return symbols


def _byte_fallback_ids(ch: str, vocab: Vocab):
    ids = []
    for b in ch.encode("utf-8"):
        tid = vocab.token_to_id.get(f"<0x{b:02X}>")
        if tid is None:
            return None
        ids.append(tid)
    return ids


def bpe_encode(text: str, vocab: Vocab, merges: MergeRules) -> list:
    """Deterministic BPE encoding of raw text.

    Unknown base symbols degrade to <0xNN> byte tokens when the vocabulary
    provides them (the marker is dropped for that character); otherwise an
    EncodingError names the offending symbol.
    """
    out = []
    style = vocab.marker_style
    for unit, preceded in pretokenize(text):
        symbols = []
        for sym in _unit_symbols(unit, preceded, style):
            if sym in vocab.token_to_id:
                symbols.append(sym)
                continue
            bare = sym[len(style.marker):] if sym.startswith(style.marker) else sym
            byte_ids = _byte_fallback_ids(bare, vocab) if len(bare) == 1 else None
            if byte_ids is None:
                raise EncodingError(
                    f"symbol {sym!r} not in vocabulary and no byte fallback available"
                )
            symbols.extend(vocab.surface(i) for i in byte_ids)
        for sym in _apply_merges(symbols, merges, style):
            out.append(vocab.token_to_id[sym])
    return out


def bpe_train(
    corpus: Iterable,
    vocab_size: int,
    marker_style: MarkerStyle,
    special_tokens: Sequence = DEFAULT_SPECIALS,
    ideographic_mode: bool = False,
):
    """Train a basic BPE vocabulary by greedy most-frequent-pair merging.

    vocab_size counts base alphabet plus merges; special tokens come on top
    and take ids 0..k-1. Pair-count ties break toward the lexicographically
    smallest (left, right) surface pair. Training stops at vocab_size or when
    no adjacent pair occurs twice.
    """
    unit_freq = Counter()
    for line in corpus:
        for unit, preceded in pretokenize(line):
            unit_freq[tuple(_unit_symbols(unit, preceded, marker_style))] += 1
    if not unit_freq:
        raise VocabError("cannot train BPE on an empty corpus")
    alphabet = sorted({s for syms in unit_freq for s in syms})
    if vocab_size <= len(alphabet):
        raise VocabError(
            f"vocab_size {vocab_size} must exceed base alphabet size {len(alphabet)}"
        )

    sequences = [[list(syms), freq] for syms, freq in sorted(unit_freq.items())]
    surfaces = list(special_tokens) + alphabet
    seen = set(surfaces)
    if len(seen) != len(surfaces):
        raise VocabError("special tokens collide with alphabet symbols")
    merges = []
    n_units = len(alphabet)
    while n_units + len(merges) < vocab_size:
        pair_counts = Counter()
        for syms, freq in sequences:
            for pos in range(len(syms) - 1):
                pair_counts[(syms[pos], syms[pos + 1])] += freq
        if not pair_counts:
            break
        top = max(pair_counts.values())
        if top < 2:
            break
        best = min(pair for pair, cnt in pair_counts.items() if cnt == top)
        merged = merge_surfaces(best[0], best[1], marker_style)
        merges.append(best)
        if merged not in seen:
            surfaces.append(merged)
            seen.add(merged)
        for entry in sequences:
            syms = entry[0]
            pos = 0
            while pos < len(syms) - 1:
                if syms[pos] == best[0] and syms[pos + 1] == best[1]:
                    syms[pos:pos + 2] = [merged]
                else:
                    pos += 1
    vocab = Vocab(
        surfaces,
        marker_style,
        frozenset(range(len(special_tokens))),
        ideographic_mode,
    )
    return vocab, MergeRules(merges)


# --- word-level display form (counts interchange) --------------------------

def word_display(surfaces: Sequence, style: MarkerStyle) -> str:
    """Render a word's tokens as one string, continuation shown with ``##``.

    Word-start style joins tokens with a literal ``##``; continuation style
    concatenates (tokens already carry their marker).
    """
    if style.kind == CONTINUATION:
        return "".join(surfaces)
    return "##".join(surfaces)


def parse_word_display(text: str, vocab: Vocab) -> tuple:
    """Invert word_display against a vocabulary, returning token ids."""
    style = vocab.marker_style
    if style.kind == WORD_START:
        surfaces = text.split("##")
    else:
        parts = text.split(style.marker)
        surfaces = [parts[0]] + [style.marker + p for p in parts[1:]]
    ids = []
    for surf in surfaces:
        tid = vocab.id_of(surf)
        if tid is None:
            raise VocabError(f"surface {surf!r} from display form {text!r} not in vocab")
        ids.append(tid)
    return tuple(ids)
