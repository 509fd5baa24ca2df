// App wiring: hash routing, rendering, keyboard-driven labeling.

import { ApiClient, ReviewLabel } from './api.js';
import { drawBold } from './plot.js';
import { ReviewStore } from './state.js';
import {
  renderCandidate,
  renderConflictBanner,
  renderDecision,
  renderEmptyCandidates,
  renderError,
  renderPatientList,
} from './views.js';

const params = new URLSearchParams(window.location.search);
const api = new ApiClient(params.get('api') ?? '');
const store = new ReviewStore(api);
const app = document.getElementById('app')!;

type Route =
  | { kind: 'list' }
  | { kind: 'review'; patientId: string }
  | { kind: 'decision'; patientId: string };

function parseRoute(): Route {
  const hash = window.location.hash.replace(/^#\/?/, '');
  const parts = hash.split('/').filter(Boolean);
  if (parts[0] === 'p' && parts[1]) {
    if (parts[2] === 'decision') return { kind: 'decision', patientId: parts[1] };
    return { kind: 'review', patientId: parts[1] };
  }
  return { kind: 'list' };
}

let route: Route = { kind: 'list' };

function render(): void {
  let html = '';
  if (store.conflict) html += renderConflictBanner();
  if (store.error) html += renderError(store.error);
  if (route.kind === 'list') {
    html += renderPatientList(store.patients);
  } else if (route.kind === 'review') {
    const current = store.current();
    html += current
      ? renderCandidate(current, store.cursor, store.candidates.length, (u) => api.sliceUrl(u))
      : renderEmptyCandidates(route.patientId, store.showAll);
  } else {
    html += store.decision ? renderDecision(store.decision) : '<p>loading decision...</p>';
  }
  app.innerHTML = html;
  const canvas = app.querySelector<HTMLCanvasElement>('canvas.bold-plot');
  const current = store.current();
  if (canvas && current) drawBold(canvas, current.bold);
}

async function navigate(): Promise<void> {
  route = parseRoute();
  if (route.kind === 'list') {
    await store.loadPatients();
  } else if (route.kind === 'review') {
    if (store.patientId !== route.patientId) await store.openPatient(route.patientId);
  } else {
    if (store.patientId !== route.patientId) await store.openPatient(route.patientId);
    await store.refreshDecision();
  }
  render();
}

app.addEventListener('click', (event) => {
  const target = (event.target as HTMLElement).closest('button');
  if (!target) return;
  const action = target.dataset.action;
  if (action === 'label') void store.labelCurrent(target.dataset.label as ReviewLabel);
  else if (action === 'next') store.move(1);
  else if (action === 'prev') store.move(-1);
  else if (action === 'retry') void navigate();
  else if (action === 'reload') {
    store.acknowledgeConflict();
    void navigate();
  }
});

document.addEventListener('keydown', (event) => {
  if (route.kind !== 'review') return;
  const key = event.key.toLowerCase();
  if (key === 'n') void store.labelCurrent('Noise');
  else if (key === 'r') void store.labelCurrent('RSN');
  else if (key === 's') void store.labelCurrent('SOZ');
  else if (event.key === 'ArrowRight') store.move(1);
  else if (event.key === 'ArrowLeft') store.move(-1);
});

store.subscribe(render);
window.addEventListener('hashchange', () => void navigate());
void navigate();
