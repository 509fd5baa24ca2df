// End-to-end review loop against the real service: a reviewer confirms
// exactly the true SOZ candidates of one synthetic patient; the decision
// view shows 100% agreement and effort = machine-marked / total; labels
// survive a service restart.

import { join } from 'node:path';
import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';

import { beforeAll, describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';
import { ReviewStore } from '../src/state.js';
import { renderCandidate, renderDecision } from '../src/views.js';
import { MAIN_URL, startService } from './fixture.js';

const api = new ApiClient(MAIN_URL);

async function pickReviewablePatient(): Promise<string> {
  // a patient whose true SOZ ICs are all machine-marked
  for (const p of await api.patients()) {
    const rows = await api.candidates(p.patient_id, true);
    const marked = new Set(rows.filter((r) => r.fused === 'SOZ').map((r) => r.ic_id));
    const truth = rows.filter((r) => r.truth === 'SOZ').map((r) => r.ic_id);
    if (truth.length > 0 && truth.every((id) => marked.has(id))) return p.patient_id;
  }
  throw new Error('fixture has no patient with all true SOZ machine-marked');
}

describe('review service API', () => {
  it('lists patients with counts and progress', async () => {
    const rows = await api.patients();
    expect(rows.length).toBe(3);
    for (const row of rows) {
      expect(row.ic_count).toBe(16);
      expect(row.mm_soz_count).toBeGreaterThanOrEqual(0);
      expect(row.review_progress).toBeGreaterThanOrEqual(0);
    }
  });

  it('serves candidates ordered by posterior, mirroring the screen order', async () => {
    const pid = (await api.patients())[0].patient_id;
    const rows = await api.candidates(pid);
    const posteriors = rows.map((r) => r.p_soz ?? -1);
    expect([...posteriors].sort((a, b) => b - a)).toEqual(posteriors);

    const store = new ReviewStore(api);
    await store.openPatient(pid);
    expect(store.candidates.map((c) => c.ic_id)).toEqual(rows.map((r) => r.ic_id));
  });

  it('serves PNG slices for candidates', async () => {
    const pid = (await api.patients())[0].patient_id;
    const rows = await api.candidates(pid, true);
    const resp = await fetch(MAIN_URL + rows[0].slice_urls[0]);
    expect(resp.status).toBe(200);
    expect(resp.headers.get('content-type')).toBe('image/png');
    const bytes = new Uint8Array(await resp.arrayBuffer());
    expect(Array.from(bytes.slice(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);
  });

  it('surfaces API errors instead of swallowing them', async () => {
    await expect(api.candidates('NOPE')).rejects.toThrowError(ApiError);
    const store = new ReviewStore(api);
    await store.openPatient('NOPE');
    expect(store.error).toContain('404');
    expect(store.patientId).toBeNull(); // state did not advance
  });
});

describe('full review loop', () => {
  let pid: string;

  beforeAll(async () => {
    pid = await pickReviewablePatient();
  });

  it('reviewer confirms exactly the true SOZ candidates', async () => {
    const store = new ReviewStore(api);
    await store.openPatient(pid);
    const total = store.candidates.length;
    expect(total).toBeGreaterThan(0);

    // keyboard flow: label the IC under the cursor, store auto-advances
    for (let i = 0; i < total; i++) {
      const current = store.current()!;
      const html = renderCandidate(current, store.cursor, total, (u) => u);
      expect(html).toContain(current.ic_id);
      const ok = await store.labelCurrent(current.truth === 'SOZ' ? 'SOZ' : 'Noise');
      expect(ok).toBe(true);
    }
    expect(store.labeledCount()).toBe(total);

    const decision = store.decision!;
    expect(decision.agreement).toBe(1.0);
    expect(decision.confirmed_soz).toEqual(decision.true_soz);
    expect(decision.effort.fraction).toBeCloseTo(decision.effort.candidates / 16, 12);
    expect(decision.effort.labeled).toBe(total);

    const html = renderDecision(decision);
    expect(html).toContain('100.0%'); // agreement on screen, straight from the API
    expect(html).toContain(`out of ${decision.effort.total} ICs`);
  });

  it('decision stays consistent on re-read (no reload needed)', async () => {
    const d1 = await api.decision(pid);
    const d2 = await api.decision(pid);
    expect(d1).toEqual(d2);
  });
});

describe('durability', () => {
  it('labels survive a service restart', async () => {
    const sessionDir = mkdtempSync(join(tmpdir(), 'icsort-session-'));
    const first = await startService(8932, sessionDir);
    try {
      const client = new ApiClient(first.url);
      const pid = (await client.patients())[0].patient_id;
      const rows = await client.candidates(pid, true);
      const ack = await client.setLabel(rows[0].ic_id, 'SOZ');
      expect(ack.version).toBe(1);
    } finally {
      await first.stop();
    }

    const second = await startService(8933, sessionDir);
    try {
      const client = new ApiClient(second.url);
      const pid = (await client.patients())[0].patient_id;
      const rows = await client.candidates(pid, true);
      expect(rows[0].reviewer_label).toBe('SOZ');
    } finally {
      await second.stop();
    }
  });
});
