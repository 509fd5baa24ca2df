// Shared fixture paths and helpers: a tiny synthetic cohort + completed run
// served by the real Python review service.

import { execFileSync, spawn, ChildProcess } from 'node:child_process';
import { existsSync, mkdirSync, rmSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

export const FIXTURE_DIR = join(import.meta.dirname, '..', '.fixture');
export const COHORT_DIR = join(FIXTURE_DIR, 'cohort');
export const RUN_DIR = join(FIXTURE_DIR, 'run');
export const MAIN_PORT = 8931;
export const MAIN_URL = `http://127.0.0.1:${MAIN_PORT}`;

const TINY_CONFIG = {
  seed: 7,
  network: {
    input_dims: [24, 24, 1],
    conv_filters: [4, 8],
    dense_units: 16,
    max_epochs: 6,
    early_stop_patience: 2,
    batch_size: 16,
    learning_rate: 1e-3,
  },
};

export function ensureFixture(): void {
  if (existsSync(join(RUN_DIR, 'report.json'))) return;
  rmSync(FIXTURE_DIR, { recursive: true, force: true });
  mkdirSync(FIXTURE_DIR, { recursive: true });
  const configPath = join(FIXTURE_DIR, 'config.json');
  writeFileSync(configPath, JSON.stringify(TINY_CONFIG));
  execFileSync(
    'python3',
    ['-m', 'icsort.cli', 'gen', '--out', COHORT_DIR, '--seed', '5', '--patients', '3',
     '--ics', '16', '--mix', '0.5,0.375,0.125', '--slices', '4x48x48'],
    { stdio: 'inherit' },
  );
  execFileSync(
    'python3',
    ['-m', 'icsort.cli', 'run', '--cohort', COHORT_DIR, '--out', RUN_DIR,
     '--config', configPath],
    { stdio: 'inherit' },
  );
}

export interface ServiceHandle {
  child: ChildProcess;
  url: string;
  stop: () => Promise<void>;
}

export async function startService(port: number, sessionDir: string): Promise<ServiceHandle> {
  const child = spawn(
    'python3',
    ['-m', 'icsort.cli', 'serve', '--cohort', COHORT_DIR, '--results', join(RUN_DIR, 'folds'),
     '--session-dir', sessionDir, '--bind', `127.0.0.1:${port}`],
    { stdio: 'inherit' },
  );
  const url = `http://127.0.0.1:${port}`;
  await waitForReady(url);
  return {
    child,
    url,
    stop: () =>
      new Promise<void>((resolve) => {
        child.once('exit', () => resolve());
        child.kill('SIGTERM');
        setTimeout(() => child.kill('SIGKILL'), 4000).unref();
      }),
  };
}

export async function waitForReady(url: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${url}/api/v1/patients`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error(`service at ${url} did not come up`);
    await new Promise((r) => setTimeout(r, 250));
  }
}
