"""Apply a token mapping to embedding tables and untied LM heads.

Each target row is the weight-convex combination of its source rows,
accumulated in float32 with a fixed ascending-source-id order, so outputs are
bit-reproducible. Rows without a mapping follow the fallback policy; the
default keeps them in distribution by using the mean of all mapped rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import RemapError
from .mapper import TokenMapping
from .tensors import EmbeddingTable
from .wordizer import Vocab

FALLBACK_MEAN = "mean_of_mapped"
FALLBACK_ZERO = "zero"
FALLBACK_ERROR = "error"
_FALLBACKS = (FALLBACK_MEAN, FALLBACK_ZERO, FALLBACK_ERROR)

_HISTOGRAM_BINS = 10


@dataclass
class RemapReport:
    mapped_count: int = 0
    identity_count: int = 0
    smoothed_only_count: int = 0
    fallback_count: int = 0
    fallback_vector_norm: float = 0.0
    max_weight_histogram: list = field(default_factory=lambda: [0] * _HISTOGRAM_BINS)

    def to_dict(self) -> dict:
        return {
            "mapped_count": self.mapped_count,
            "identity_count": self.identity_count,
            "smoothed_only_count": self.smoothed_only_count,
            "fallback_count": self.fallback_count,
            "fallback_vector_norm": self.fallback_vector_norm,
            "max_weight_histogram": list(self.max_weight_histogram),
        }


def _validate_mapping_against(source: EmbeddingTable, mapping: TokenMapping) -> int:
    if mapping.source_vocab_size and mapping.source_vocab_size != source.vocab_size:
        raise RemapError(
            f"source table has {source.vocab_size} rows but the mapping was built "
            f"for a {mapping.source_vocab_size}-token source vocabulary"
        )
    target_size = mapping.target_vocab_size
    if target_size <= 0:
        raise RemapError("mapping does not declare a target vocabulary size")
    for tgt_id, row in mapping.rows.items():
        if not (0 <= tgt_id < target_size):
            raise RemapError(f"mapping row {tgt_id} outside target vocabulary")
        weight_sum = math.fsum(w for _, w in row)
        if abs(weight_sum - 1.0) > 1e-6:
            raise RemapError(f"mapping row {tgt_id} is not stochastic (sum {weight_sum!r})")
        for src_id, _ in row:
            if not (0 <= src_id < source.vocab_size):
                raise RemapError(f"mapping row {tgt_id} references source id {src_id}")
    return target_size


def remap_embeddings(
    source: EmbeddingTable,
    mapping: TokenMapping,
    fallback: str = FALLBACK_MEAN,
    target_vocab: Optional[Vocab] = None,
):
    """Build the target-table rows from mapped source rows.

    Returns (table, report). fallback governs rows with no mapping:
    mean_of_mapped fills them with the arithmetic mean of all mapped target
    rows, zero leaves them at zero, error raises and names the tokens.
    """
    if fallback not in _FALLBACKS:
        raise RemapError(f"unknown fallback policy {fallback!r}")
    target_size = _validate_mapping_against(source, mapping)

    src = source.data
    out = np.zeros((target_size, source.hidden_dim), dtype=np.float32)
    report = RemapReport()
    for tgt_id in sorted(mapping.rows):
        row = mapping.rows[tgt_id]
        acc = None
        for src_id, weight in sorted(row):
            term = np.float32(weight) * src[src_id]
            acc = term if acc is None else acc + term
        out[tgt_id] = acc
        report.mapped_count += 1
        max_weight = max(w for _, w in row)
        if len(row) == 1 and row[0][1] == 1.0:
            report.identity_count += 1
        bin_index = min(int(max_weight * _HISTOGRAM_BINS), _HISTOGRAM_BINS - 1)
        report.max_weight_histogram[bin_index] += 1
    report.smoothed_only_count = len(mapping.smoothed_only & set(mapping.rows))

    missing = [t for t in range(target_size) if t not in mapping.rows]
    report.fallback_count = len(missing)
    if missing:
        if fallback == FALLBACK_ERROR:
            names = [
                target_vocab.surface(t) if target_vocab is not None else str(t)
                for t in missing[:20]
            ]
            raise RemapError(
                f"{len(missing)} target tokens have no mapping: {', '.join(names)}"
                + ("..." if len(missing) > 20 else "")
            )
        if fallback == FALLBACK_MEAN:
            if report.mapped_count == 0:
                raise RemapError("mean fallback impossible: no rows were mapped")
            total = np.zeros(source.hidden_dim, dtype=np.float32)
            for tgt_id in sorted(mapping.rows):
                total = total + out[tgt_id]
            mean_row = total / np.float32(report.mapped_count)
            report.fallback_vector_norm = float(np.linalg.norm(mean_row.astype(np.float64)))
            for t in missing:
                out[t] = mean_row
    table = EmbeddingTable(out, source.element_width, source.name)
    return table, report


def remap_lm_head(
    head: EmbeddingTable,
    mapping: TokenMapping,
    fallback: str = FALLBACK_MEAN,
    target_vocab: Optional[Vocab] = None,
):
    """Same contract as remap_embeddings; the head is stored [vocab x hidden]."""
    return remap_embeddings(head, mapping, fallback, target_vocab)


def merge_initializations(tables: Sequence, weights: Optional[Sequence] = None) -> EmbeddingTable:
    """Elementwise weighted mean of same-shape tables (uniform by default)."""
    if not tables:
        raise RemapError("no tables to merge")
    shape = tables[0].data.shape
    for table in tables[1:]:
        if table.data.shape != shape:
            raise RemapError(f"shape mismatch: {table.data.shape} vs {shape}")
    if weights is None:
        weights = [1.0 / len(tables)] * len(tables)
    if len(weights) != len(tables):
        raise RemapError("one weight per table required")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise RemapError(f"weights must sum to 1, got {math.fsum(weights)!r}")
    acc = None
    for table, weight in zip(tables, weights):
        term = np.float32(weight) * table.data
        acc = term if acc is None else acc + term
    return EmbeddingTable(acc, tables[0].element_width, tables[0].name)


def compare_initializations(a: EmbeddingTable, b: EmbeddingTable):
    """Per-row cosine similarity and summary stats; zero rows compare as 0."""
    if a.data.shape != b.data.shape:
        raise RemapError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    norm_x = np.linalg.norm(x, axis=1)
    norm_y = np.linalg.norm(y, axis=1)
    dots = np.einsum("ij,ij->i", x, y)
    denom = norm_x * norm_y
    cosines = np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)
    edges = np.linspace(-1.0, 1.0, 21)
    hist, _ = np.histogram(cosines, bins=edges)
    stats = {
        "mean": float(np.mean(cosines)),
        "median": float(np.median(cosines)),
        "histogram": {"edges": edges.tolist(), "counts": hist.tolist()},
    }
    return cosines, stats
