"""tokmap: evidence-based token mapping and embedding-table surgery.

Builds a probabilistic mapping between two tokenizers' vocabularies from a
parallel corpus (word re-merging, EM alignment with a diagonal prior, count
splitting and normalization) and uses it to re-initialize embedding tables,
untied LM heads, and multi-vocabulary compositions.
"""

from .aligner import (
    DiagonalParams,
    SentenceAlignment,
    TranslationTable,
    em_train,
    import_alignments,
    symmetrize,
    viterbi_align,
)
from .analysis import mapping_stats, normalize_perplexity
from .corpus import CorpusStats, PairReader, SentencePair, filter_pairs, read_pairs
from .errors import TokmapError
from .hydra import HydraComposition, compose, encode_mixed, mask_labels
from .mapper import (
    TokenAlignmentCounts,
    TokenMapping,
    WordPairCounts,
    add_smoothing,
    apply_threshold,
    count_word_pairs,
    load_mapping,
    merge_mappings,
    normalize,
    save_mapping,
    split_to_tokens,
)
from .pipeline import PipelineConfig, PipelineResult, run_pipeline
from .remapper import (
    RemapReport,
    compare_initializations,
    merge_initializations,
    remap_embeddings,
    remap_lm_head,
)
from .tensors import EmbeddingTable, read_tensor, write_tensor
from .wordizer import (
    MarkerStyle,
    MergeRules,
    Vocab,
    WordSequence,
    bpe_encode,
    bpe_train,
    remerge_words,
)

__version__ = "0.1.0"
