// Plain records mirroring the core's file schemas and report objects.

/** One target token's mapping row: [sourceTokenId, weight] pairs. */
export type MappingRow = Array<[number, number]>;

/** Parsed canonical mapping file. */
export interface MappingFile {
  source_vocab_hash: string;
  target_vocab_hash: string;
  source_vocab_size: number;
  target_vocab_size: number;
  rows: Record<string, MappingRow>;
  unmapped: number[];
  smoothed_only: number[];
  provenance: Record<string, unknown>;
}

/** Remap report for one table, as emitted by the core. */
export interface RemapReport {
  mapped_count: number;
  identity_count: number;
  smoothed_only_count: number;
  fallback_count: number;
  fallback_vector_norm: number;
  max_weight_histogram: number[];
}

/** Reports keyed by table ("embeddings", optionally "lm_head"). */
export type RemapReports = Record<string, RemapReport>;

export type Fallback = 'mean' | 'zero' | 'error';

export interface BuildMappingOptions {
  /** Directory for pipeline artifacts (created if missing). */
  outDir: string;
  sourceMerges?: string;
  targetMerges?: string;
  /** Corpus sides are already space-separated token surfaces. */
  pretokenized?: boolean;
  minCount?: number;
  iterations?: number;
  strategy?: 'average' | 'all_to_all' | 'in_order';
  direction?: 'forward' | 'reverse' | 'both';
  symmetrization?: 'int' | 'union' | 'gdfa';
  threads?: number;
  maxPairs?: number;
  python?: string;
}

export interface HydraSegmentSpec {
  vocabPath: string;
  tensorPath: string;
  tensorName: string;
}

export interface ComposeHydraOptions {
  targetVocabPath: string;
  /** "file:name" sources for the target tables. */
  embeddings: { path: string; name: string };
  head: { path: string; name: string };
  extras?: HydraSegmentSpec[];
  maskLabel?: number;
  outManifest: string;
  outTensors: string;
  python?: string;
}

export interface HydraManifest {
  output_vocab_size: number;
  segments: Array<{ vocab_hash: string; offset: number; size: number }>;
  tensor_file: string;
  mask_label: number;
}

export interface MappingStats {
  target_vocab_size: number;
  mapped_count: number;
  unmapped_fraction: number;
  identity_fraction: number;
  smoothed_only_count: number;
  mean_entropy_bits: number;
  mean_fan_in: number;
  highest_entropy: Array<{
    target_id: number;
    target_surface: string | null;
    entropy_bits: number;
  }>;
}
