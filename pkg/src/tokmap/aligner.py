"""Word-level EM alignment with a log-linear diagonal prior.

The model aligns each target word position j to a source position i (or to a
null word at i=0). The alignment prior is

    delta(0 | j, m, n)    = p0
    delta(i | j, m, n)    = (1 - p0) * exp(tension * h(i, j, m, n)) / Z
    h(i, j, m, n)         = -|i/m - j/n|

with Z summing exp(tension * h) over i = 1..m. Translation probabilities
t(target | source) are learned by EM, with either maximum-likelihood count
normalization or a digamma-based mean-field update when a Dirichlet smoothing
weight is set. Sentences are processed in fixed-size shards whose partial
counts merge in shard order, so results are bit-identical for any thread
count.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .errors import AlignerError

# Reserved source-word key for the null word; KEY_SEP-joined surfaces cannot
# contain NUL.
NULL_KEY = "\x00<null>"

VITERBI_FLOOR = 1e-12

DEFAULT_SHARD_SIZE = 4096

_TENSION_STEPS = 8
_TENSION_RATE = 20.0
_TENSION_MIN = 0.1
_TENSION_MAX = 14.0


@dataclass
class DiagonalParams:
    """Diagonal-prior and estimator knobs. vb_alpha=0 selects ML updates."""

    tension: float = 4.0
    p0: float = 0.08
    vb_alpha: float = 0.01

    def __post_init__(self):
        if not (0.0 <= self.p0 < 1.0):
            raise AlignerError(f"p0 must be in [0, 1), got {self.p0}")
        if self.tension < 0:
            raise AlignerError(f"tension must be nonnegative, got {self.tension}")
        if self.vb_alpha < 0:
            raise AlignerError(f"vb_alpha must be nonnegative, got {self.vb_alpha}")


def diagonal_feature(i: int, j: int, m: int, n: int) -> float:
    return -abs(i / m - j / n)


def compute_z(j: int, m: int, n: int, tension: float) -> float:
    """Normalizer over source positions 1..m for target position j.

    Uses the two-sided geometric series around the diagonal crossing point
    (terms decay by exp(-tension/m) per step away from it) instead of the
    naive O(m) sum.
    """
    if tension < 1e-12:
        return float(m)
    floor_i = (j * m) // n  # exact: arguments are integers
    ratio = math.exp(-tension / m)
    z = 0.0
    num_top = m - floor_i
    if num_top > 0:
        first = math.exp(tension * diagonal_feature(floor_i + 1, j, m, n))
        z += first * (1.0 - ratio ** num_top) / (1.0 - ratio)
    if floor_i > 0:
        first = math.exp(tension * diagonal_feature(floor_i, j, m, n))
        z += first * (1.0 - ratio ** floor_i) / (1.0 - ratio)
    return z


def _dlogz(j: int, m: int, n: int, tension: float) -> float:
    """d/d(tension) of log Z; plain sum, only used once per sentence shape."""
    z = 0.0
    d = 0.0
    for i in range(1, m + 1):
        h = diagonal_feature(i, j, m, n)
        w = math.exp(tension * h)
        z += w
        d += w * h
    return d / z


def _delta_rows(m: int, n: int, params: DiagonalParams, tension: float):
    """Per target position j: ([delta_i for i=1..m], [h_i for i=1..m])."""
    rows = []
    scale = 1.0 - params.p0
    for j in range(1, n + 1):
        z = compute_z(j, m, n, tension)
        deltas = []
        feats = []
        for i in range(1, m + 1):
            h = diagonal_feature(i, j, m, n)
            deltas.append(scale * math.exp(tension * h) / z)
            feats.append(h)
        rows.append((deltas, feats))
    return rows


class TranslationTable:
    """t(target word | source word), keyed by canonical word-key strings."""

    def __init__(self, t: Optional[dict] = None):
        self.t = t if t is not None else {}
        self.log_likelihood_history: list = []
        self.final_tension: Optional[float] = None

    def prob(self, source_key: str, target_key: str, default: float = 0.0) -> float:
        row = self.t.get(source_key)
        if row is None:
            return default
        return row.get(target_key, default)

    def row(self, source_key: str) -> dict:
        return self.t.get(source_key, {})

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class SentenceAlignment:
    """Word links for one sentence pair, 1-based; 0 is reserved for null."""

    links: list
    sentence_no: int = 0
    source_len: int = 0
    target_len: int = 0

    def __post_init__(self):
        self.links = [(int(i), int(j)) for i, j in self.links]
        if self.source_len == 0 and self.links:
            self.source_len = max(i for i, _ in self.links)
        if self.target_len == 0 and self.links:
            self.target_len = max(j for _, j in self.links)
        seen_targets = set()
        for i, j in self.links:
            if not (1 <= i <= max(self.source_len, 1)) or not (1 <= j <= max(self.target_len, 1)):
                raise AlignerError(
                    f"sentence {self.sentence_no}: link ({i},{j}) out of bounds "
                    f"{self.source_len}x{self.target_len}"
                )
            if j in seen_targets:
                raise AlignerError(
                    f"sentence {self.sentence_no}: target position {j} linked twice"
                )
            seen_targets.add(j)

    def link_set(self) -> set:
        return set(self.links)


def _shards(items: Sequence, shard_size: int) -> list:
    return [items[k:k + shard_size] for k in range(0, len(items), shard_size)]


def _estep_shard(shard, t, uniform, params, tension, collect_grad):
    """E-step over one shard; returns (counts, ll, emp_feat, size_counts, toks)."""
    counts: dict = {}
    ll = 0.0
    emp_feat = 0.0
    size_counts: Counter = Counter()
    toks = 0
    p0 = params.p0
    delta_cache: dict = {}
    for src_ids, tgt_ids in shard:
        m = len(src_ids)
        n = len(tgt_ids)
        key = (m, n)
        rows = delta_cache.get(key)
        if rows is None:
            rows = _delta_rows(m, n, params, tension)
            delta_cache[key] = rows
        if collect_grad:
            size_counts[key] += 1
        toks += n
        for j, e in enumerate(tgt_ids, start=1):
            deltas, feats = rows[j - 1]
            if t is None:
                null_score = p0 * uniform
                scores = [deltas[k] * uniform for k in range(m)]
            else:
                null_row = t[0]
                null_score = p0 * null_row.get(e, VITERBI_FLOOR)
                scores = []
                for k in range(m):
                    row = t[src_ids[k]]
                    scores.append(deltas[k] * row.get(e, VITERBI_FLOOR))
            denom = null_score + sum(scores)
            ll += math.log(denom)
            inv = 1.0 / denom
            null_counts = counts.setdefault(0, {})
            null_counts[e] = null_counts.get(e, 0.0) + null_score * inv
            for k in range(m):
                q = scores[k] * inv
                f = src_ids[k]
                row_counts = counts.setdefault(f, {})
                row_counts[e] = row_counts.get(e, 0.0) + q
                if collect_grad:
                    emp_feat += q * feats[k]
    return counts, ll, emp_feat, size_counts, toks


def _merge_counts(partials: list) -> dict:
    merged: dict = {}
    for counts in partials:
        for f, row in counts.items():
            dst = merged.setdefault(f, {})
            for e, c in row.items():
                dst[e] = dst.get(e, 0.0) + c
    return merged


def em_train(
    corpus: Sequence,
    iterations: int = 5,
    params: Optional[DiagonalParams] = None,
    optimize_tension: bool = True,
    threads: int = 1,
    shard_size: int = DEFAULT_SHARD_SIZE,
) -> TranslationTable:
    """Train t(target|source) on (source_keys, target_keys) sentence pairs.

    Sentences with an empty side are ignored. In ML mode with fixed tension
    the corpus log-likelihood is asserted non-decreasing across iterations.
    When optimize_tension is set, the tension is updated from iteration 2 on
    by gradient ascent on the expected log-likelihood (8 steps per iteration),
    and params.tension is updated in place to the final value.
    """
    if iterations < 1:
        raise AlignerError("iterations must be >= 1")
    if params is None:
        params = DiagonalParams()
    pairs = corpus if isinstance(corpus, list) else list(corpus)

    src_index: dict = {NULL_KEY: 0}
    tgt_index: dict = {}
    encoded = []
    for src_words, tgt_words in pairs:
        if not src_words or not tgt_words:
            continue
        encoded.append((
            [src_index.setdefault(w, len(src_index)) for w in src_words],
            [tgt_index.setdefault(w, len(tgt_index)) for w in tgt_words],
        ))
    if not encoded:
        raise AlignerError("empty corpus")

    uniform = 1.0 / len(tgt_index)
    ml_mode = params.vb_alpha == 0.0
    tension = params.tension
    shards = _shards(encoded, shard_size)
    t: Optional[list] = None
    history: list = []

    for iteration in range(1, iterations + 1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(
                    lambda sh: _estep_shard(sh, t, uniform, params, tension, optimize_tension),
                    shards,
                ))
        else:
            results = [
                _estep_shard(sh, t, uniform, params, tension, optimize_tension)
                for sh in shards
            ]
        counts = _merge_counts([r[0] for r in results])
        ll = math.fsum(r[1] for r in results)
        emp_feat = math.fsum(r[2] for r in results)
        size_counts: Counter = Counter()
        for r in results:
            size_counts.update(r[3])
        toks = sum(r[4] for r in results)

        if ml_mode and not optimize_tension and history:
            tolerance = 1e-9 * abs(history[-1]) + 1e-12
            if ll < history[-1] - tolerance:
                raise AlignerError(
                    f"ML log-likelihood decreased at iteration {iteration}: "
                    f"{history[-1]} -> {ll}"
                )
        history.append(ll)

        t = _m_step(counts, len(src_index), params.vb_alpha)

        if optimize_tension and iteration >= 2:
            emp_norm = emp_feat / toks
            for _ in range(_TENSION_STEPS):
                mod_feat = 0.0
                for (m, n), cnt in size_counts.items():
                    mod_feat += cnt * math.fsum(
                        _dlogz(j, m, n, tension) for j in range(1, n + 1)
                    )
                tension += (emp_norm - mod_feat / toks) * _TENSION_RATE
                tension = min(max(tension, _TENSION_MIN), _TENSION_MAX)

    params.tension = tension
    src_names = [None] * len(src_index)
    for key, idx in src_index.items():
        src_names[idx] = key
    tgt_names = [None] * len(tgt_index)
    for key, idx in tgt_index.items():
        tgt_names[idx] = key
    table = TranslationTable({
        src_names[f]: {tgt_names[e]: p for e, p in row.items()}
        for f, row in enumerate(t)
        if row
    })
    table.log_likelihood_history = history
    table.final_tension = tension
    return table


def _m_step(counts: dict, n_source: int, vb_alpha: float) -> list:
    """Normalize expected counts into t rows (indexed by interned source id)."""
    if vb_alpha > 0.0:
        from scipy.special import digamma

        t = [{} for _ in range(n_source)]
        for f, row in counts.items():
            total = math.fsum(row.values())
            denom = math.exp(digamma(total + vb_alpha * len(row)))
            t[f] = {
                e: math.exp(digamma(c + vb_alpha)) / denom for e, c in row.items()
            }
        return t
    t = [{} for _ in range(n_source)]
    for f, row in counts.items():
        total = math.fsum(row.values())
        t[f] = {e: c / total for e, c in row.items()}
    return t


def posterior_matrix(
    pair,
    table: Optional[TranslationTable],
    params: Optional[DiagonalParams] = None,
) -> list:
    """Per target position j, the posterior [q(a_j=0), q(a_j=1), ..., q(a_j=m)].

    table=None means uniform translation probabilities (the E-step seen by the
    first EM iteration). Rows sum to 1.
    """
    if params is None:
        params = DiagonalParams()
    src_keys, tgt_keys = pair
    m = len(src_keys)
    rows = _delta_rows(m, len(tgt_keys), params, params.tension)
    out = []
    for j, target in enumerate(tgt_keys, start=1):
        deltas, _ = rows[j - 1]
        if table is None:
            scores = [params.p0] + list(deltas)
        else:
            scores = [params.p0 * table.prob(NULL_KEY, target, VITERBI_FLOOR)]
            scores += [
                deltas[k] * table.prob(src_keys[k], target, VITERBI_FLOOR)
                for k in range(m)
            ]
        total = sum(scores)
        out.append([s / total for s in scores])
    return out


def viterbi_align(
    pair,
    table: TranslationTable,
    params: Optional[DiagonalParams] = None,
    sentence_no: int = 0,
) -> SentenceAlignment:
    """Link each target word to its argmax source position (null drops the link).

    Ties break toward smaller i, with null (i=0) winning outright ties. Words
    unseen in the table fall back to a floor probability of 1e-12.
    """
    if params is None:
        params = DiagonalParams()
    src_keys, tgt_keys = pair
    m = len(src_keys)
    n = len(tgt_keys)
    links = []
    for j, target in enumerate(tgt_keys, start=1):
        best_i = 0
        best_score = params.p0 * table.prob(NULL_KEY, target, VITERBI_FLOOR)
        z = compute_z(j, m, n, params.tension)
        scale = 1.0 - params.p0
        for i, source in enumerate(src_keys, start=1):
            delta = scale * math.exp(params.tension * diagonal_feature(i, j, m, n)) / z
            score = delta * table.prob(source, target, VITERBI_FLOOR)
            if score > best_score:
                best_score = score
                best_i = i
        if best_i > 0:
            links.append((best_i, j))
    return SentenceAlignment(links, sentence_no, source_len=m, target_len=n)


def viterbi_align_corpus(
    pairs: Sequence,
    table: TranslationTable,
    params: Optional[DiagonalParams] = None,
    threads: int = 1,
    shard_size: int = DEFAULT_SHARD_SIZE,
) -> list:
    """Viterbi-align every (source_keys, target_keys) pair, caching the prior
    per sentence shape. Sentence numbering follows input order from 0."""
    if params is None:
        params = DiagonalParams()
    pairs = pairs if isinstance(pairs, list) else list(pairs)
    numbered = list(enumerate(pairs))
    shards = _shards(numbered, shard_size)

    def run(shard):
        delta_cache: dict = {}
        out = []
        for sentence_no, (src_keys, tgt_keys) in shard:
            m = len(src_keys)
            n = len(tgt_keys)
            rows = delta_cache.get((m, n))
            if rows is None and m > 0:
                rows = _delta_rows(m, n, params, params.tension)
                delta_cache[(m, n)] = rows
            links = []
            for j, target in enumerate(tgt_keys, start=1):
                best_i = 0
                best_score = params.p0 * table.prob(NULL_KEY, target, VITERBI_FLOOR)
                deltas = rows[j - 1][0] if m > 0 else []
                for k in range(m):
                    score = deltas[k] * table.prob(src_keys[k], target, VITERBI_FLOOR)
                    if score > best_score:
                        best_score = score
                        best_i = k + 1
                if best_i > 0:
                    links.append((best_i, j))
            out.append(SentenceAlignment(links, sentence_no, source_len=m, target_len=n))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            shard_results = list(pool.map(run, shards))
    else:
        shard_results = [run(sh) for sh in shards]
    return [alignment for shard in shard_results for alignment in shard]


# --- symmetrization ---------------------------------------------------------

INTERSECTION = "intersection"
UNION = "union"
GROW_DIAG_FINAL_AND = "grow_diag_final_and"

_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def symmetrize(
    forward: SentenceAlignment,
    reverse: SentenceAlignment,
    mode: str = GROW_DIAG_FINAL_AND,
) -> SentenceAlignment:
    """Combine two directional alignments over the same sentence pair."""
    m = max(forward.source_len, reverse.source_len)
    n = max(forward.target_len, reverse.target_len)
    if (forward.source_len and reverse.source_len and forward.source_len != reverse.source_len) or (
        forward.target_len and reverse.target_len and forward.target_len != reverse.target_len
    ):
        raise AlignerError(
            f"sentence {forward.sentence_no}: directional alignments disagree on "
            f"sentence lengths ({forward.source_len}x{forward.target_len} vs "
            f"{reverse.source_len}x{reverse.target_len})"
        )
    f_links = forward.link_set()
    r_links = reverse.link_set()
    if mode == INTERSECTION:
        links = sorted(f_links & r_links)
    elif mode == UNION:
        links = sorted(f_links | r_links)
    elif mode == GROW_DIAG_FINAL_AND:
        links = _grow_diag_final_and(f_links, r_links, m, n)
    else:
        raise AlignerError(f"unknown symmetrization mode {mode!r}")
    return _multi_target_alignment(links, forward.sentence_no, m, n)


def _multi_target_alignment(links, sentence_no, m, n) -> SentenceAlignment:
    # Symmetrized links may legitimately reuse a target position, which the
    # SentenceAlignment validator forbids for directional alignments; build
    # around it.
    alignment = SentenceAlignment([], sentence_no, source_len=m, target_len=n)
    alignment.links = sorted(links)
    return alignment


def _grow_diag_final_and(f_links: set, r_links: set, m: int, n: int) -> list:
    aligned = f_links & r_links
    union = f_links | r_links
    src_aligned = {i for i, _ in aligned}
    tgt_aligned = {j for _, j in aligned}

    changed = True
    while changed:
        changed = False
        for i in range(1, m + 1):
            for j in range(1, n + 1):
                if (i, j) not in aligned:
                    continue
                for di, dj in _NEIGHBORS:
                    ni, nj = i + di, j + dj
                    if not (1 <= ni <= m and 1 <= nj <= n):
                        continue
                    if (ni, nj) in aligned or (ni, nj) not in union:
                        continue
                    if ni not in src_aligned or nj not in tgt_aligned:
                        aligned.add((ni, nj))
                        src_aligned.add(ni)
                        tgt_aligned.add(nj)
                        changed = True
    for candidates in (sorted(f_links), sorted(r_links)):
        for i, j in candidates:
            if (i, j) in aligned:
                continue
            if i not in src_aligned and j not in tgt_aligned:
                aligned.add((i, j))
                src_aligned.add(i)
                tgt_aligned.add(j)
    return sorted(aligned)


# --- Pharaoh interchange ----------------------------------------------------

_PHARAOH_TOKEN = re.compile(r"\S+")


def import_alignments(path) -> Iterator[SentenceAlignment]:
    """Parse Pharaoh `i-j` lines (0-based) into 1-based SentenceAlignments."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise AlignerError(f"cannot read alignments {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        links = []
        for match in _PHARAOH_TOKEN.finditer(line):
            token = match.group(0)
            parts = token.split("-")
            if len(parts) != 2 or not parts[0].isdigit() or not parts[1].isdigit():
                raise AlignerError(
                    f"{path}:{line_no}:{match.start() + 1}: malformed link {token!r}"
                )
            links.append((int(parts[0]) + 1, int(parts[1]) + 1))
        yield _multi_target_alignment(links, line_no, 0, 0)


def export_pharaoh(alignments: Iterable, path) -> None:
    """Write alignments as Pharaoh `i-j` lines, 0-based, sorted per sentence."""
    with open(path, "w", encoding="utf-8") as fh:
        for alignment in alignments:
            fh.write(" ".join(f"{i - 1}-{j - 1}" for i, j in sorted(alignment.links)))
            fh.write("\n")
