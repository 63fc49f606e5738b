"""Streaming reader and hygiene filters for triple-pipe parallel corpora.

One sentence pair per line, `source ||| target`. The reader is strict about
encoding (UTF-8 only) but lenient about junk lines, which are skipped and
counted rather than aborting the run: web-mined corpora contain them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import CorpusError

SEPARATOR = " ||| "

DEFAULT_MIN_CHARS = 1
DEFAULT_MAX_CHARS = 4096
DEFAULT_RATIO_CAP = 9.0


@dataclass(frozen=True)
class SentencePair:
    """One parallel sentence pair; sides are trimmed and never empty."""

    source_text: str
    target_text: str
    line_no: int


@dataclass
class CorpusStats:
    pair_count: int = 0
    skipped_count: int = 0
    source_token_total: int = 0
    target_token_total: int = 0


class PairReader:
    """Iterate SentencePairs from a file, holding one line in memory at a time.

    Lines are skipped (and tallied in ``stats.skipped_count``) when they do not
    contain exactly one separator or when either side trims to empty. Stats are
    populated as the stream is consumed.
    """

    def __init__(self, path, max_pairs: Optional[int] = None):
        self.path = Path(path)
        if max_pairs is not None and max_pairs < 0:
            raise CorpusError("max_pairs must be nonnegative")
        self.max_pairs = max_pairs
        self.stats = CorpusStats()

    def __iter__(self) -> Iterator[SentencePair]:
        try:
            fh = open(self.path, "rb")
        except OSError as exc:
            raise CorpusError(f"cannot read corpus {self.path}: {exc}") from exc
        with fh:
            for line_no, raw in enumerate(fh, start=1):
                if self.max_pairs is not None and self.stats.pair_count >= self.max_pairs:
                    return
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError as exc:
                    raise CorpusError(
                        f"{self.path}:{line_no}: invalid UTF-8 ({exc.reason})"
                    ) from exc
                line = line.rstrip("\r\n")
                if line.count(SEPARATOR) != 1:
                    self.stats.skipped_count += 1
                    continue
                source, target = line.split(SEPARATOR)
                source = source.strip()
                target = target.strip()
                if not source or not target:
                    self.stats.skipped_count += 1
                    continue
                self.stats.pair_count += 1
                self.stats.source_token_total += len(source.split())
                self.stats.target_token_total += len(target.split())
                yield SentencePair(source, target, line_no)


def read_pairs(path, max_pairs: Optional[int] = None) -> Iterator[SentencePair]:
    """Stream sentence pairs from a triple-pipe corpus file."""
    return iter(PairReader(path, max_pairs=max_pairs))


def filter_pairs(
    pairs: Iterable[SentencePair],
    min_chars: int = DEFAULT_MIN_CHARS,
    max_chars: int = DEFAULT_MAX_CHARS,
    length_ratio_cap: float = DEFAULT_RATIO_CAP,
) -> Iterator[SentencePair]:
    """Keep pairs whose sides are within [min_chars, max_chars] characters and
    whose length ratio max/min does not exceed the cap. Order-preserving."""
    if min_chars > max_chars:
        raise CorpusError(f"min_chars {min_chars} exceeds max_chars {max_chars}")
    if length_ratio_cap < 1:
        raise CorpusError(f"length_ratio_cap must be >= 1, got {length_ratio_cap}")
    for pair in pairs:
        len_s = len(pair.source_text)
        len_t = len(pair.target_text)
        if len_s < min_chars or len_s > max_chars:
            continue
        if len_t < min_chars or len_t > max_chars:
            continue
        if max(len_s, len_t) > length_ratio_cap * min(len_s, len_t):
            continue
        yield pair
