"""Diagnostics: cross-tokenizer perplexity normalization and mapping stats."""

from __future__ import annotations

import math
from typing import Optional

from .errors import MapperError
from .mapper import TokenMapping
from .wordizer import Vocab


def normalize_perplexity(mean_loss: float, model_token_count: int,
                         native_token_count: int) -> float:
    """Per-native-token perplexity: exp(mean_loss) * model_tokens / native_tokens.

    Scaling by the token-count ratio makes perplexities comparable across
    models with different tokenizers.
    """
    if model_token_count <= 0 or native_token_count <= 0:
        raise MapperError(
            f"token counts must be positive, got {model_token_count} and {native_token_count}"
        )
    return math.exp(mean_loss) * model_token_count / native_token_count


def row_entropy_bits(row) -> float:
    """Shannon entropy of one mapping row's weights, in bits."""
    return -math.fsum(w * math.log2(w) for _, w in row if w > 0)


def mapping_stats(
    mapping: TokenMapping,
    source_vocab: Optional[Vocab] = None,
    target_vocab: Optional[Vocab] = None,
    top_entropy: int = 10,
) -> dict:
    """Fan-in and entropy per target token plus aggregate fractions.

    identity_fraction counts rows with a single source whose surface equals
    the target surface after marker normalization (requires both vocabs).
    """
    per_token = {}
    entropies = []
    identity_rows = 0
    for tgt_id, row in mapping.rows.items():
        entropy = row_entropy_bits(row)
        per_token[tgt_id] = {"fan_in": len(row), "entropy_bits": entropy}
        entropies.append((entropy, tgt_id))
        if source_vocab is not None and target_vocab is not None and len(row) == 1:
            src_id = row[0][0]
            if (source_vocab.strip_marker(source_vocab.surface(src_id))
                    == target_vocab.strip_marker(target_vocab.surface(tgt_id))):
                identity_rows += 1

    target_size = mapping.target_vocab_size or (
        (max(mapping.rows) + 1) if mapping.rows else 0
    )
    mapped = len(mapping.rows)
    entropies.sort(reverse=True)
    top = [
        {
            "target_id": tgt_id,
            "target_surface": target_vocab.surface(tgt_id) if target_vocab else None,
            "entropy_bits": entropy,
        }
        for entropy, tgt_id in entropies[:top_entropy]
    ]
    return {
        "target_vocab_size": target_size,
        "mapped_count": mapped,
        "unmapped_fraction": (target_size - mapped) / target_size if target_size else 0.0,
        "identity_fraction": identity_rows / mapped if mapped else 0.0,
        "smoothed_only_count": len(mapping.smoothed_only & set(mapping.rows)),
        "mean_entropy_bits": (
            math.fsum(e for e, _ in entropies) / len(entropies) if entropies else 0.0
        ),
        "mean_fan_in": (
            math.fsum(len(r) for r in mapping.rows.values()) / mapped if mapped else 0.0
        ),
        "highest_entropy": top,
        "per_token": per_token,
    }
