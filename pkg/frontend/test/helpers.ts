// Fixture builders used by the client tests: vocab/corpus writers and a
// minimal F32 tensor-container writer for test inputs.

import { execFileSync } from 'node:child_process';
import { createHash } from 'node:crypto';
import { mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

export const PYTHON = process.env.TOKMAP_PYTHON ?? 'python3';

export function runCliRaw(args: string[]): string {
  return execFileSync(PYTHON, ['-m', 'tokmap.cli', ...args], {
    encoding: 'utf-8',
    stdio: ['ignore', 'pipe', 'pipe'],
  });
}

export function sha256(path: string): string {
  return createHash('sha256').update(readFileSync(path)).digest('hex');
}

export interface VocabFile {
  tokens: string[];
  marker_style: { kind: string; marker: string };
  special_tokens: number[];
  ideographic: boolean;
}

export function writeVocab(path: string, tokens: string[], specials = 3): void {
  const vocab: VocabFile = {
    tokens,
    marker_style: { kind: 'word_start', marker: '_' },
    special_tokens: Array.from({ length: specials }, (_, i) => i),
    ideographic: false,
  };
  writeFileSync(path, JSON.stringify(vocab, null, 1) + '\n', 'utf-8');
}

export const GOLDEN_COUNTS: [number, number, number] = [13721, 12293, 544];

/** Pretokenized corpus engineered to reproduce the worked-example counts. */
export function writeGoldenFixture(
  dir: string,
  counts: [number, number, number] = GOLDEN_COUNTS,
): { corpus: string; sourceVocab: string; targetVocab: string } {
  mkdirSync(dir, { recursive: true });
  const sourceVocab = join(dir, 'source_vocab.json');
  const targetVocab = join(dir, 'target_vocab.json');
  writeVocab(sourceVocab, ['<unk>', '<s>', '</s>', '_fifteen', '_15', '_Fif', 'teen']);
  writeVocab(targetVocab, ['<unk>', '<s>', '</s>', '_vijftien']);

  const lines: string[] = [];
  for (let i = 0; i < counts[0]; i++) lines.push('_fifteen ||| _vijftien');
  for (let i = 0; i < counts[1]; i++) lines.push('_15 ||| _vijftien');
  for (let i = 0; i < counts[2]; i++) lines.push('_Fif teen ||| _vijftien');
  const corpus = join(dir, 'corpus.txt');
  writeFileSync(corpus, lines.join('\n') + '\n', 'utf-8');
  return { corpus, sourceVocab, targetVocab };
}

const IDENTITY_SENTENCES = [
  'the cat sat on the mat',
  'a dog ran over the hill',
  'birds sing in tall trees',
  'rivers flow toward the sea',
  'children play near old houses',
  'bread and cheese for lunch',
  'the moon rose above clouds',
  'cold wind moved the leaves',
  'seven ships left the harbor',
  'music filled the quiet room',
];

/** Copy-corpus fixture: same tokenizer and text both sides, plus embeddings. */
export function writeIdentityFixture(dir: string): {
  corpus: string;
  vocab: string;
  merges: string;
  embeddings: string;
  vocabSize: number;
} {
  mkdirSync(dir, { recursive: true });
  const text = join(dir, 'text.txt');
  writeFileSync(
    text,
    IDENTITY_SENTENCES.concat(IDENTITY_SENTENCES).join('\n') + '\n',
    'utf-8',
  );
  const vocab = join(dir, 'vocab.json');
  const merges = join(dir, 'merges.txt');
  runCliRaw([
    'train-bpe', '--input', text, '--vocab-size', '400',
    '--out-vocab', vocab, '--out-merges', merges,
  ]);
  const vocabSize = (JSON.parse(readFileSync(vocab, 'utf-8')) as VocabFile).tokens.length;

  const corpus = join(dir, 'corpus.txt');
  const lines: string[] = [];
  for (let r = 0; r < 25; r++) {
    for (const sentence of IDENTITY_SENTENCES) lines.push(`${sentence} ||| ${sentence}`);
  }
  writeFileSync(corpus, lines.join('\n') + '\n', 'utf-8');

  const embeddings = join(dir, 'embeddings.tensors');
  writeF32Tensor(embeddings, 'embeddings', vocabSize, 16, 12345);
  return { corpus, vocab, merges, embeddings, vocabSize };
}

/** Deterministic pseudo-random F32 matrix in the core's container layout. */
export function writeF32Tensor(
  path: string,
  name: string,
  rows: number,
  cols: number,
  seed: number,
): void {
  const payload = Buffer.alloc(rows * cols * 4);
  let state = BigInt(seed) & 0xffffffffn;
  for (let i = 0; i < rows * cols; i++) {
    state = (state * 1664525n + 1013904223n) & 0xffffffffn;
    const value = Number(state) / 0xffffffff - 0.5;
    payload.writeFloatLE(value, i * 4);
  }
  const header = Buffer.from(
    JSON.stringify({
      [name]: { dtype: 'F32', shape: [rows, cols], data_offsets: [0, payload.length] },
    }),
    'utf-8',
  );
  const prefix = Buffer.alloc(8);
  prefix.writeBigUInt64LE(BigInt(header.length));
  writeFileSync(path, Buffer.concat([prefix, header, payload]));
}

/** Raw payload bytes of a named tensor in a container file. */
export function tensorPayload(path: string, name: string): Buffer {
  const blob = readFileSync(path);
  const headerLen = Number(blob.readBigUInt64LE(0));
  const header = JSON.parse(blob.subarray(8, 8 + headerLen).toString('utf-8')) as Record<
    string,
    { data_offsets: [number, number] }
  >;
  const [begin, end] = header[name].data_offsets;
  const payloadStart = 8 + headerLen;
  return blob.subarray(payloadStart + begin, payloadStart + end);
}
