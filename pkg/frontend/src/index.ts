// Thin client over the tokmap CLI. Matrices and corpora cross the boundary
// as file paths; artifacts are byte-identical to what the CLI produces
// because the CLI is what produces them.

import { mkdirSync, readFileSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import { runCli, type CliOptions } from './cli.js';
import { BoundMapping, readMapping } from './mapping.js';
import type {
  BuildMappingOptions,
  ComposeHydraOptions,
  Fallback,
  HydraManifest,
  MappingStats,
  RemapReports,
} from './types.js';

export { BoundMapping, readMapping } from './mapping.js';
export { TokmapCliError } from './cli.js';
export type * from './types.js';

/**
 * Run the core pipeline through its mapping stage and return a handle to the
 * resulting mapping artifact (outDir/mapping.json).
 */
export function buildMapping(
  corpusPath: string,
  sourceTokenizerPath: string,
  targetTokenizerPath: string,
  options: BuildMappingOptions,
): BoundMapping {
  mkdirSync(options.outDir, { recursive: true });
  const config: Record<string, unknown> = {
    corpus: [corpusPath],
    source_vocab: sourceTokenizerPath,
    target_vocab: targetTokenizerPath,
    out_dir: options.outDir,
  };
  if (options.sourceMerges !== undefined) config.source_merges = options.sourceMerges;
  if (options.targetMerges !== undefined) config.target_merges = options.targetMerges;
  if (options.pretokenized !== undefined) config.pretokenized = options.pretokenized;
  if (options.minCount !== undefined) config.min_count = options.minCount;
  if (options.iterations !== undefined) config.iterations = options.iterations;
  if (options.strategy !== undefined) config.strategy = options.strategy;
  if (options.direction !== undefined) config.direction = options.direction;
  if (options.symmetrization !== undefined) config.symmetrization = options.symmetrization;
  if (options.threads !== undefined) config.threads = options.threads;
  if (options.maxPairs !== undefined) config.max_pairs = options.maxPairs;

  const configPath = join(options.outDir, 'client_config.json');
  writeFileSync(configPath, JSON.stringify(config, null, 1) + '\n', 'utf-8');
  runCli(['run', '--config', configPath], cliOptions(options));
  return readMapping(join(options.outDir, 'mapping.json'));
}

/**
 * Apply a mapping to an embedding table on disk; returns the core's report.
 * The optional lmHead pair remaps an untied head with the same mapping.
 */
export function remap(
  mapping: BoundMapping,
  embeddingsPath: string,
  outPath: string,
  fallback: Fallback = 'mean',
  options?: CliOptions & {
    embeddingsName?: string;
    lmHead?: { path: string; name?: string; outPath: string };
    reportPath?: string;
  },
): RemapReports {
  const args = [
    'remap',
    '--source-embeddings', embeddingsPath,
    '--embeddings-name', options?.embeddingsName ?? 'embeddings',
    '--mapping', mapping.path,
    '--out', outPath,
    '--fallback', fallback,
  ];
  if (options?.lmHead) {
    args.push('--lm-head', options.lmHead.path);
    args.push('--lm-head-name', options.lmHead.name ?? 'lm_head');
    args.push('--lm-head-out', options.lmHead.outPath);
  }
  if (options?.reportPath) {
    args.push('--report', options.reportPath);
    runCli(args, options);
    return JSON.parse(readFileSync(options.reportPath, 'utf-8')) as RemapReports;
  }
  return JSON.parse(runCli(args, options)) as RemapReports;
}

/** Compose a multi-vocabulary artifact; returns the parsed manifest. */
export function composeHydra(options: ComposeHydraOptions): HydraManifest {
  const args = [
    'hydra',
    '--target-vocab', options.targetVocabPath,
    '--embeddings', `${options.embeddings.path}:${options.embeddings.name}`,
    '--head', `${options.head.path}:${options.head.name}`,
    '--out-manifest', options.outManifest,
    '--out-tensors', options.outTensors,
  ];
  for (const extra of options.extras ?? []) {
    args.push('--extra', `${extra.vocabPath}:${extra.tensorPath}:${extra.tensorName}`);
  }
  if (options.maskLabel !== undefined) {
    args.push('--mask-label', String(options.maskLabel));
  }
  runCli(args, { python: options.python });
  return JSON.parse(readFileSync(options.outManifest, 'utf-8')) as HydraManifest;
}

/** Mapping diagnostics (fan-in, entropy, unmapped/identity fractions). */
export function mappingStats(
  mapping: BoundMapping,
  options?: CliOptions & { sourceVocabPath?: string; targetVocabPath?: string },
): MappingStats {
  const args = ['stats', '--mapping', mapping.path];
  if (options?.sourceVocabPath) args.push('--source-vocab', options.sourceVocabPath);
  if (options?.targetVocabPath) args.push('--target-vocab', options.targetVocabPath);
  return JSON.parse(runCli(args, options)) as MappingStats;
}

/** Per-native-token perplexity via the core (exp(loss) * model/native). */
export function normalizePerplexity(
  meanLoss: number,
  modelTokens: number,
  nativeTokens: number,
  options?: CliOptions,
): number {
  const out = runCli([
    'ppl-normalize',
    '--mean-loss', String(meanLoss),
    '--model-tokens', String(modelTokens),
    '--native-tokens', String(nativeTokens),
  ], options);
  return Number.parseFloat(out.trim());
}

function cliOptions(options: BuildMappingOptions): CliOptions {
  return options.python === undefined ? {} : { python: options.python };
}
