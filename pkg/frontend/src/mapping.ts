import { readFileSync } from 'node:fs';

import type { MappingFile, MappingRow } from './types.js';

/**
 * Handle to a mapping produced by the core. Holds the artifact path plus the
 * parsed canonical JSON; weights are read verbatim, never recomputed.
 */
export class BoundMapping {
  readonly path: string;
  private readonly file: MappingFile;

  constructor(path: string) {
    this.path = path;
    this.file = JSON.parse(readFileSync(path, 'utf-8')) as MappingFile;
  }

  get sourceVocabSize(): number {
    return this.file.source_vocab_size;
  }

  get targetVocabSize(): number {
    return this.file.target_vocab_size;
  }

  get sourceVocabHash(): string {
    return this.file.source_vocab_hash;
  }

  get targetVocabHash(): string {
    return this.file.target_vocab_hash;
  }

  get mappedCount(): number {
    return Object.keys(this.file.rows).length;
  }

  get unmapped(): number[] {
    return [...this.file.unmapped];
  }

  get provenance(): Record<string, unknown> {
    return { ...this.file.provenance };
  }

  /** Weights for one target token id, or undefined when unmapped. */
  weightsFor(targetId: number): MappingRow | undefined {
    const row = this.file.rows[String(targetId)];
    return row ? row.map(([s, w]) => [s, w]) : undefined;
  }

  /** The raw parsed file, for callers that need the full record. */
  toJSON(): MappingFile {
    return this.file;
  }
}

/** Load an existing mapping artifact. */
export function readMapping(path: string): BoundMapping {
  return new BoundMapping(path);
}
