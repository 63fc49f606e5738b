"""Multi-vocabulary compositions: one output vocabulary, several input ones.

The combined input table stacks the target table first (offset 0) followed by
each extra vocabulary's table at a cumulative offset; the output head covers
only the target vocabulary. Token ids from extra tokenizers are shifted by
their segment offset, and training labels beyond the output vocabulary are
masked to -100.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import HydraError
from .tensors import EmbeddingTable, read_tensor, write_tensor
from .wordizer import Vocab, bpe_encode

MASK_LABEL = -100

INPUT_TABLE_NAME = "input_embeddings"
OUTPUT_HEAD_NAME = "output_head"


@dataclass(frozen=True)
class Segment:
    vocab_hash: str
    offset: int
    size: int


@dataclass
class HydraComposition:
    output_vocab_size: int
    segments: list
    combined_input_table: EmbeddingTable
    output_head: EmbeddingTable
    mask_label: int = MASK_LABEL
    # Metadata only: whether original-vocabulary tokens should be encoded by
    # the source model's bottom layers. No layer logic lives here.
    route_extra_segments_through_source_layers: bool = False

    def __post_init__(self):
        if not self.segments or self.segments[0].offset != 0:
            raise HydraError("segment 0 must be the target vocabulary at offset 0")
        if self.segments[0].size != self.output_vocab_size:
            raise HydraError("segment 0 size must equal the output vocabulary size")
        expected_offset = 0
        for segment in self.segments:
            if segment.offset != expected_offset:
                raise HydraError(
                    f"segment offsets must be cumulative; expected {expected_offset}, "
                    f"got {segment.offset}"
                )
            expected_offset += segment.size
        if self.combined_input_table.vocab_size != expected_offset:
            raise HydraError(
                f"combined table has {self.combined_input_table.vocab_size} rows, "
                f"segments cover {expected_offset}"
            )
        if self.output_head.vocab_size != self.output_vocab_size:
            raise HydraError(
                f"output head has {self.output_head.vocab_size} rows, "
                f"output vocabulary has {self.output_vocab_size}"
            )

    @property
    def combined_vocab_size(self) -> int:
        return self.combined_input_table.vocab_size

    def segment_of(self, combined_id: int):
        """Recover (segment index, raw id) from a combined id."""
        if not (0 <= combined_id < self.combined_vocab_size):
            raise HydraError(
                f"combined id {combined_id} out of range 0..{self.combined_vocab_size - 1}"
            )
        for index in range(len(self.segments) - 1, -1, -1):
            segment = self.segments[index]
            if combined_id >= segment.offset:
                return index, combined_id - segment.offset
        raise HydraError("unreachable: segment 0 starts at offset 0")


def compose(
    target_vocab: Vocab,
    target_embeddings: EmbeddingTable,
    target_head: EmbeddingTable,
    extra_tables: Sequence = (),
    mask_label: int = MASK_LABEL,
) -> HydraComposition:
    """Stack [target; extra_1; extra_2; ...] into one input table.

    extra_tables is a sequence of (Vocab, EmbeddingTable). All hidden
    dimensions must agree; each table must match its vocabulary's size.
    """
    hidden = target_embeddings.hidden_dim
    if target_head.hidden_dim != hidden:
        raise HydraError(
            f"head hidden dim {target_head.hidden_dim} != embeddings hidden dim {hidden}"
        )
    if target_embeddings.vocab_size != len(target_vocab):
        raise HydraError(
            f"target table has {target_embeddings.vocab_size} rows, "
            f"vocabulary has {len(target_vocab)}"
        )
    if target_head.vocab_size != target_embeddings.vocab_size:
        raise HydraError("target head and embeddings disagree on vocabulary size")

    segments = [Segment(target_vocab.content_hash(), 0, len(target_vocab))]
    blocks = [target_embeddings.data]
    offset = len(target_vocab)
    for vocab, table in extra_tables:
        if table.hidden_dim != hidden:
            raise HydraError(
                f"extra table hidden dim {table.hidden_dim} != {hidden}"
            )
        if table.vocab_size != len(vocab):
            raise HydraError(
                f"extra table has {table.vocab_size} rows, vocabulary has {len(vocab)}"
            )
        segments.append(Segment(vocab.content_hash(), offset, len(vocab)))
        blocks.append(table.data)
        offset += len(vocab)

    combined = EmbeddingTable(
        np.concatenate(blocks, axis=0),
        target_embeddings.element_width,
        INPUT_TABLE_NAME,
    )
    head = EmbeddingTable(target_head.data, target_head.element_width, OUTPUT_HEAD_NAME)
    return HydraComposition(
        output_vocab_size=len(target_vocab),
        segments=segments,
        combined_input_table=combined,
        output_head=head,
        mask_label=mask_label,
    )


def encode_mixed(
    spans: Sequence,
    composition: HydraComposition,
    tokenizers: dict,
) -> list:
    """Encode (segment index, text) spans with their segment tokenizers.

    Returns [(combined id, in_output_vocab)] in span order; in_output_vocab is
    True exactly when the id addresses the output vocabulary.
    """
    out = []
    for segment_index, text in spans:
        if not (0 <= segment_index < len(composition.segments)):
            raise HydraError(f"no segment {segment_index} in this composition")
        if segment_index not in tokenizers:
            raise HydraError(f"no tokenizer supplied for segment {segment_index}")
        vocab, merges = tokenizers[segment_index]
        segment = composition.segments[segment_index]
        if vocab.content_hash() != segment.vocab_hash:
            raise HydraError(
                f"tokenizer for segment {segment_index} does not match the "
                f"composed vocabulary"
            )
        for raw_id in bpe_encode(text, vocab, merges):
            combined = raw_id + segment.offset
            out.append((combined, combined < composition.output_vocab_size))
    return out


def mask_labels(ids: Sequence, composition: HydraComposition) -> list:
    """Keep in-output ids; everything beyond becomes the mask label."""
    out = []
    for combined_id in ids:
        if not (0 <= combined_id < composition.combined_vocab_size):
            raise HydraError(
                f"id {combined_id} out of combined range 0..{composition.combined_vocab_size - 1}"
            )
        out.append(combined_id if combined_id < composition.output_vocab_size else composition.mask_label)
    return out


def save_composition(composition: HydraComposition, manifest_path, tensor_path) -> None:
    """Write tensors via the container module plus a JSON manifest."""
    write_tensor(tensor_path, [composition.combined_input_table, composition.output_head])
    manifest = {
        "output_vocab_size": composition.output_vocab_size,
        "segments": [
            {"vocab_hash": s.vocab_hash, "offset": s.offset, "size": s.size}
            for s in composition.segments
        ],
        "tensor_file": os.fspath(tensor_path),
        "mask_label": composition.mask_label,
        "route_extra_segments_through_source_layers":
            composition.route_extra_segments_through_source_layers,
    }
    manifest_path = Path(manifest_path)
    tmp = manifest_path.with_name(manifest_path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, ensure_ascii=False, indent=1) + "\n",
                   encoding="utf-8")
    os.replace(tmp, manifest_path)


def load_composition(manifest_path) -> HydraComposition:
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        segments = [
            Segment(s["vocab_hash"], int(s["offset"]), int(s["size"]))
            for s in manifest["segments"]
        ]
        tensor_file = manifest["tensor_file"]
        output_vocab_size = int(manifest["output_vocab_size"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise HydraError(f"cannot load composition manifest {manifest_path}: {exc}") from exc
    if not os.path.isabs(tensor_file):
        tensor_file = os.path.join(os.path.dirname(os.fspath(manifest_path)), tensor_file)
    return HydraComposition(
        output_vocab_size=output_vocab_size,
        segments=segments,
        combined_input_table=read_tensor(tensor_file, INPUT_TABLE_NAME),
        output_head=read_tensor(tensor_file, OUTPUT_HEAD_NAME),
        mask_label=int(manifest.get("mask_label", MASK_LABEL)),
        route_extra_segments_through_source_layers=bool(
            manifest.get("route_extra_segments_through_source_layers", False)
        ),
    )
