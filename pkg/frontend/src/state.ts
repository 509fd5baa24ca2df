// Review session store: current patient, candidate cursor, label posting.
// The store never advances past a label until the API has acknowledged it,
// and it flags version jumps from concurrent writers so the UI can prompt a
// reload.

import { ApiClient, Candidate, Decision, PatientSummary, ReviewLabel } from './api.js';

export type Listener = () => void;

export class ReviewStore {
  patients: PatientSummary[] = [];
  patientId: string | null = null;
  candidates: Candidate[] = [];
  cursor = 0;
  decision: Decision | null = null;
  showAll = false;
  lastVersion = 0;
  conflict = false;
  error: string | null = null;
  busy = false;

  private listeners: Listener[] = [];

  constructor(readonly api: ApiClient) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  private async guard<T>(work: () => Promise<T>): Promise<T | null> {
    this.busy = true;
    this.error = null;
    this.emit();
    try {
      return await work();
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
      return null;
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  async loadPatients(): Promise<void> {
    await this.guard(async () => {
      this.patients = await this.api.patients();
    });
  }

  async openPatient(patientId: string, showAll = this.showAll): Promise<void> {
    await this.guard(async () => {
      const candidates = await this.api.candidates(patientId, showAll);
      this.patientId = patientId;
      this.showAll = showAll;
      this.candidates = candidates;
      this.cursor = 0;
      this.decision = null;
    });
  }

  current(): Candidate | null {
    return this.candidates[this.cursor] ?? null;
  }

  move(delta: number): void {
    if (!this.candidates.length) return;
    const next = this.cursor + delta;
    this.cursor = Math.min(this.candidates.length - 1, Math.max(0, next));
    this.emit();
  }

  /** Label the candidate under the cursor; state advances only after the API ack. */
  async labelCurrent(label: ReviewLabel): Promise<boolean> {
    const candidate = this.current();
    if (!candidate) return false;
    const ack = await this.guard(() => this.api.setLabel(candidate.ic_id, label));
    if (ack === null) return false;
    if (this.lastVersion > 0 && ack.version !== this.lastVersion + 1) {
      this.conflict = true; // someone else wrote between our posts
    }
    this.lastVersion = ack.version;
    candidate.reviewer_label = label;
    if (this.cursor < this.candidates.length - 1) {
      this.cursor += 1;
    }
    await this.refreshDecision();
    return true;
  }

  async refreshDecision(): Promise<void> {
    if (this.patientId === null) return;
    await this.guard(async () => {
      this.decision = await this.api.decision(this.patientId!);
    });
  }

  labeledCount(): number {
    return this.candidates.filter((c) => c.reviewer_label !== null).length;
  }

  acknowledgeConflict(): void {
    this.conflict = false;
    this.emit();
  }
}
