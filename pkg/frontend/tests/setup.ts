// vitest globalSetup: build the fixture run once, serve it for the whole
// test session.

import { join } from 'node:path';
import { rmSync } from 'node:fs';

import { ensureFixture, startService, FIXTURE_DIR, MAIN_PORT, ServiceHandle } from './fixture.js';

let handle: ServiceHandle | null = null;

export async function setup(): Promise<void> {
  ensureFixture();
  const sessionDir = join(FIXTURE_DIR, 'sessions-main');
  rmSync(sessionDir, { recursive: true, force: true });
  handle = await startService(MAIN_PORT, sessionDir);
}

export async function teardown(): Promise<void> {
  if (handle) await handle.stop();
}
