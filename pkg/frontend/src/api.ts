// Typed client for the review service. Every view renders these payloads
// verbatim; nothing is recomputed client-side.

export type ReviewLabel = 'Noise' | 'RSN' | 'SOZ';

export interface PatientSummary {
  patient_id: string;
  ic_count: number;
  mm_soz_count: number;
  review_progress: number;
  meta: Record<string, string>;
}

export interface Candidate {
  ic_id: string;
  p_soz: number | null;
  fused: string;
  truth: string;
  features: Record<string, number>;
  n_slices: number;
  slice_urls: string[];
  bold: number[];
  tr_seconds: number;
  reviewer_label: ReviewLabel | null;
}

export interface Decision {
  patient_id: string;
  confirmed_soz: string[];
  effort: { candidates: number; labeled: number; total: number; fraction: number };
  agreement: number | null;
  true_soz: string[];
  session_version: number;
}

export interface LabelAck {
  ic_id: string;
  label: ReviewLabel;
  version: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`API ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = '') {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === 'string') detail = body.detail;
        else if (body) detail = JSON.stringify(body.detail ?? body);
      } catch {
        /* non-JSON error body; keep statusText */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  patients(): Promise<PatientSummary[]> {
    return this.request('/api/v1/patients');
  }

  candidates(patientId: string, all = false): Promise<Candidate[]> {
    const q = all ? '?all=true' : '';
    return this.request(`/api/v1/patients/${encodeURIComponent(patientId)}/candidates${q}`);
  }

  setLabel(icId: string, label: ReviewLabel): Promise<LabelAck> {
    return this.request(`/api/v1/ics/${encodeURIComponent(icId)}/label`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ label }),
    });
  }

  decision(patientId: string): Promise<Decision> {
    return this.request(`/api/v1/patients/${encodeURIComponent(patientId)}/decision`);
  }

  sliceUrl(relative: string): string {
    return this.baseUrl + relative;
  }
}
