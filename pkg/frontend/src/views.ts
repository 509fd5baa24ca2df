// HTML renderers. Pure functions from API payloads to markup so snapshot
// tests can pin every displayed number to an API field.

import { Candidate, Decision, PatientSummary } from './api.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function pct(value: number | null): string {
  return value === null ? 'n/a' : `${(100 * value).toFixed(1)}%`;
}

export function prob(value: number | null): string {
  return value === null ? 'n/a' : value.toFixed(3);
}

export function renderError(message: string): string {
  return `<div class="error-banner" role="alert">
    <span>${escapeHtml(message)}</span>
    <button data-action="retry">Retry</button>
  </div>`;
}

export function renderConflictBanner(): string {
  return `<div class="conflict-banner" role="alert">
    Another reviewer changed this session. <button data-action="reload">Reload</button>
  </div>`;
}

export function renderPatientList(rows: PatientSummary[]): string {
  const body = rows
    .map(
      (p) => `<tr data-patient="${escapeHtml(p.patient_id)}">
        <td><a href="#/p/${escapeHtml(p.patient_id)}">${escapeHtml(p.patient_id)}</a></td>
        <td>${p.ic_count}</td>
        <td>${p.mm_soz_count}</td>
        <td>${pct(p.review_progress)}</td>
        <td>${escapeHtml(p.meta.age_group ?? '')} ${escapeHtml(p.meta.sex ?? '')}</td>
      </tr>`,
    )
    .join('\n');
  return `<section class="patient-list">
    <h1>Patients</h1>
    <table>
      <thead><tr><th>Patient</th><th>ICs</th><th>Marked SOZ</th><th>Reviewed</th><th>Meta</th></tr></thead>
      <tbody>${body}</tbody>
    </table>
  </section>`;
}

export function renderFeatureTable(features: Record<string, number>): string {
  const order = ['n_clusters', 'wm_overlap', 'activelet_gini', 'sine_gini', 'hf_dominant'];
  const rows = order
    .filter((k) => k in features)
    .map((k) => {
      const v = features[k];
      const shown = Number.isInteger(v) ? String(v) : v.toFixed(4);
      return `<tr><th>${escapeHtml(k)}</th><td>${shown}</td></tr>`;
    })
    .join('');
  return `<table class="features">${rows}</table>`;
}

export function renderCandidate(
  candidate: Candidate,
  index: number,
  total: number,
  sliceUrl: (rel: string) => string,
): string {
  const gallery = candidate.slice_urls
    .map((u, k) => `<img class="slice" alt="slice ${k}" src="${escapeHtml(sliceUrl(u))}">`)
    .join('');
  const label = candidate.reviewer_label
    ? `<span class="label label-${candidate.reviewer_label.toLowerCase()}">${candidate.reviewer_label}</span>`
    : '<span class="label label-unset">unlabeled</span>';
  return `<section class="candidate" data-ic="${escapeHtml(candidate.ic_id)}">
    <header>
      <h2>${escapeHtml(candidate.ic_id)}</h2>
      <span class="p-soz" title="SOZ posterior">p(SOZ) = ${prob(candidate.p_soz)}</span>
      <span class="counter">${index + 1} / ${total}</span>
      ${label}
    </header>
    <div class="gallery">${gallery}</div>
    <canvas class="bold-plot" width="640" height="120"
      data-tr="${candidate.tr_seconds}" aria-label="BOLD time course"></canvas>
    ${renderFeatureTable(candidate.features)}
    <footer class="actions">
      <button data-action="label" data-label="Noise">Noise (N)</button>
      <button data-action="label" data-label="RSN">RSN (R)</button>
      <button data-action="label" data-label="SOZ">SOZ (S)</button>
      <button data-action="prev">&#8592; Prev</button>
      <button data-action="next">Next &#8594;</button>
      <a href="#/p/${escapeHtml(candidate.ic_id.split('-')[0])}/decision">Decision summary</a>
    </footer>
  </section>`;
}

export function renderDecision(decision: Decision): string {
  const confirmed = decision.confirmed_soz.length
    ? decision.confirmed_soz.map((id) => `<li>${escapeHtml(id)}</li>`).join('')
    : '<li class="empty">none confirmed yet</li>';
  const agreement =
    decision.agreement === null
      ? '<p class="agreement">No ground truth available.</p>'
      : `<p class="agreement">Agreement with ground truth: <strong>${pct(decision.agreement)}</strong></p>`;
  const e = decision.effort;
  return `<section class="decision" data-patient="${escapeHtml(decision.patient_id)}">
    <h2>Decision &mdash; ${escapeHtml(decision.patient_id)}</h2>
    <p class="effort">Reviewed ${e.labeled} of ${e.candidates} machine-marked candidates
      out of ${e.total} ICs (effort fraction <strong>${pct(e.fraction)}</strong>).</p>
    ${agreement}
    <h3>Confirmed SOZ ICs</h3>
    <ul class="confirmed">${confirmed}</ul>
    <a href="#/p/${escapeHtml(decision.patient_id)}">Back to review</a>
    <a href="#/">All patients</a>
  </section>`;
}

export function renderEmptyCandidates(patientId: string, showAll: boolean): string {
  const hint = showAll
    ? 'This patient has no ICs at all, which should never happen.'
    : 'No machine-marked SOZ candidates. Use show-all mode to inspect every IC.';
  return `<section class="candidate empty">
    <h2>${escapeHtml(patientId)}</h2>
    <p>${hint}</p>
    <a href="#/p/${escapeHtml(patientId)}/decision">Decision summary</a>
    <a href="#/">All patients</a>
  </section>`;
}
