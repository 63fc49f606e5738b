// Subprocess plumbing for the tokmap CLI. All computation happens in the
// core process; this module only launches it and surfaces its messages.

import { execFileSync } from 'node:child_process';

/** Raised when the core CLI exits nonzero; carries its message and exit code. */
export class TokmapCliError extends Error {
  readonly exitCode: number;
  readonly stderr: string;

  constructor(command: string[], exitCode: number, stderr: string) {
    super(`tokmap ${command[0]} failed (exit ${exitCode}): ${stderr.trim()}`);
    this.name = 'TokmapCliError';
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}

export interface CliOptions {
  /** Python interpreter that has the core package installed. */
  python?: string;
}

function interpreter(options?: CliOptions): string {
  return options?.python ?? process.env.TOKMAP_PYTHON ?? 'python3';
}

/** Run one tokmap subcommand synchronously, returning its stdout. */
export function runCli(args: string[], options?: CliOptions): string {
  try {
    return execFileSync(interpreter(options), ['-m', 'tokmap.cli', ...args], {
      encoding: 'utf-8',
      stdio: ['ignore', 'pipe', 'pipe'],
      maxBuffer: 64 * 1024 * 1024,
    });
  } catch (error) {
    const failure = error as { status?: number | null; stderr?: string | Buffer };
    const stderr =
      typeof failure.stderr === 'string'
        ? failure.stderr
        : (failure.stderr?.toString('utf-8') ?? String(error));
    throw new TokmapCliError(args, failure.status ?? -1, stderr);
  }
}
