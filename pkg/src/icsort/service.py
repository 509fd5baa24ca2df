"""HTTP review API for the expert sorting step.

Serves machine-marked SOZ candidates (posterior-descending) with slice
renderings, BOLD traces, and feature vectors; accepts reviewer labels; and
reports the per-patient decision with effort and ground-truth agreement.
Reviewer labels live in their own session document -- fold results and
cohort files are never mutated.
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import spatial, temporal
from .classify import FEATURE_NAMES
from .cohort import _decode_ic, read_manifest
from .pipeline import FoldResult, compute_features, load_fold_results

API_PREFIX = "/api/v1"

# Slice palette (fixed so renderings are reproducible): the anatomy template
# is drawn as gray up to 190/255; activation >= 35% of the slice maximum is
# overlaid in pure red with intensity proportional to activation.
TEMPLATE_GRAY_MAX = 190
OVERLAY_CUTOFF = 0.35


class LabelRequest(BaseModel):
    label: Literal["Noise", "RSN", "SOZ"]


@dataclass
class ReviewSession:
    session_id: str
    version: int = 0
    labels: dict[str, dict] = field(default_factory=dict)  # ic_id -> {label, updated}

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "version": self.version, "labels": self.labels}

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewSession":
        return cls(session_id=d["session_id"], version=d["version"], labels=d["labels"])


class ReviewStore:
    """Session persistence: every acknowledged label mutation is durably on
    disk (atomic replace + fsync) before the response goes out."""

    def __init__(self, session_dir: str | Path, session_id: str = "default"):
        self.path = Path(session_dir) / f"session_{session_id}.json"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        if self.path.exists():
            self.session = ReviewSession.from_dict(json.loads(self.path.read_text()))
        else:
            self.session = ReviewSession(session_id=session_id)

    def set_label(self, ic_id: str, label: str) -> int:
        with self.lock:
            self.session.version += 1
            self.session.labels[ic_id] = {
                "label": label,
                "updated": time.time(),
                "version": self.session.version,
            }
            tmp = self.path.with_suffix(".json.tmp")
            with open(tmp, "w") as fh:
                json.dump(self.session.to_dict(), fh, sort_keys=True, indent=2)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)
            return self.session.version

    def label_of(self, ic_id: str) -> str | None:
        entry = self.session.labels.get(ic_id)
        return entry["label"] if entry else None


class ReviewData:
    """Read-only view over a cohort directory and a completed run."""

    def __init__(self, cohort_dir: str | Path, results_dir: str | Path):
        self.cohort_dir = Path(cohort_dir)
        manifest = read_manifest(self.cohort_dir)
        self.ic_files: dict[str, Path] = {}
        for patient in manifest["patients"]:
            for entry in patient["ics"]:
                self.ic_files[entry["ic_id"]] = self.cohort_dir / entry["file"]
        self.folds: dict[str, FoldResult] = {
            fr.patient_id: fr for fr in load_fold_results(results_dir) if fr.status == "ok"
        }
        self.record_index = {
            r.ic_id: r for fr in self.folds.values() for r in fr.records
        }
        self._features: dict[str, np.ndarray] = {}
        self._spatial: spatial.SpatialParams | None = None
        self._temporal: temporal.TemporalParams | None = None

    def load_ic(self, ic_id: str):
        path = self.ic_files.get(ic_id)
        if path is None:
            return None
        return _decode_ic(path.read_bytes(), ic_id)

    def features_for(self, ic_id: str) -> dict[str, float]:
        if ic_id not in self._features:
            ic = self.load_ic(ic_id)
            if self._spatial is None:
                self._spatial = spatial.params_for_dims(ic.slices.shape[1], ic.slices.shape[2])
                self._temporal = temporal.TemporalParams(tr_seconds=ic.tr_seconds)
            self._features[ic_id] = compute_features(ic, self._spatial, self._temporal)
        return dict(zip(FEATURE_NAMES, (float(v) for v in self._features[ic_id])))

    def candidates(self, patient_id: str, show_all: bool) -> list:
        fold = self.folds[patient_id]
        records = [r for r in fold.records if show_all or r.fused == "SOZ"]
        records.sort(key=lambda r: (-(r.p_soz if r.p_soz is not None else -1.0), r.ic_id))
        return records


def render_slice_png(ic, k: int) -> bytes:
    """Grayscale anatomy + red activation overlay, 1:1 voxel-to-pixel."""
    from PIL import Image

    from . import anatomy

    sl = np.asarray(ic.slices[k], dtype=np.float64)
    h, w = sl.shape
    template = np.asarray(anatomy.template_slice(h, w), dtype=np.float64)
    t_max = template.max() or 1.0
    gray = np.round(TEMPLATE_GRAY_MAX * template / t_max).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=2)
    peak = sl.max()
    if peak > 0:
        norm = sl / peak
        hot = norm >= OVERLAY_CUTOFF
        rgb[hot, 0] = np.round(255 * norm[hot]).astype(np.uint8)
        rgb[hot, 1] = (rgb[hot, 1] * 0.25).astype(np.uint8)
        rgb[hot, 2] = (rgb[hot, 2] * 0.25).astype(np.uint8)
    img = Image.fromarray(rgb, mode="RGB")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def build_app(
    cohort_dir: str | Path,
    results_dir: str | Path,
    session_dir: str | Path,
    ui_dir: str | Path | None = None,
    show_all: bool = False,
) -> FastAPI:
    data = ReviewData(cohort_dir, results_dir)
    store = ReviewStore(session_dir)
    app = FastAPI(title="IC review service", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def _fold_or_404(patient_id: str) -> FoldResult:
        fold = data.folds.get(patient_id)
        if fold is None:
            raise HTTPException(status_code=404, detail=f"unknown patient {patient_id}")
        return fold

    @app.get(API_PREFIX + "/patients")
    def patients() -> list[dict]:
        out = []
        for pid in sorted(data.folds):
            fold = data.folds[pid]
            candidates = [r for r in fold.records if r.fused == "SOZ"]
            labeled = sum(1 for r in candidates if store.label_of(r.ic_id) is not None)
            out.append(
                {
                    "patient_id": pid,
                    "ic_count": len(fold.records),
                    "mm_soz_count": len(candidates),
                    "review_progress": labeled / len(candidates) if candidates else 1.0,
                    "meta": fold.meta,
                }
            )
        return out

    @app.get(API_PREFIX + "/patients/{patient_id}/candidates")
    def candidates(patient_id: str, all: bool = Query(default=False)) -> list[dict]:
        _fold_or_404(patient_id)
        out = []
        for r in data.candidates(patient_id, show_all=all):
            ic = data.load_ic(r.ic_id)
            out.append(
                {
                    "ic_id": r.ic_id,
                    "p_soz": r.p_soz,
                    "fused": r.fused,
                    "truth": r.truth,
                    "features": data.features_for(r.ic_id),
                    "n_slices": int(ic.slices.shape[0]),
                    "slice_urls": [
                        f"{API_PREFIX}/ics/{r.ic_id}/slice/{k}.png"
                        for k in range(ic.slices.shape[0])
                    ],
                    "bold": [float(v) for v in ic.bold],
                    "tr_seconds": float(ic.tr_seconds),
                    "reviewer_label": store.label_of(r.ic_id),
                }
            )
        return out

    @app.get(API_PREFIX + "/ics/{ic_id}/slice/{k}.png")
    def slice_png(ic_id: str, k: int) -> Response:
        ic = data.load_ic(ic_id)
        if ic is None:
            raise HTTPException(status_code=404, detail=f"unknown IC {ic_id}")
        if not 0 <= k < ic.slices.shape[0]:
            raise HTTPException(status_code=404, detail=f"slice {k} out of range")
        return Response(content=render_slice_png(ic, k), media_type="image/png")

    @app.post(API_PREFIX + "/ics/{ic_id}/label")
    def set_label(ic_id: str, body: LabelRequest) -> dict:
        record = data.record_index.get(ic_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown IC {ic_id}")
        if record.fused != "SOZ" and not show_all:
            raise HTTPException(
                status_code=422,
                detail="IC is not machine-marked; restart the service with show_all",
            )
        version = store.set_label(ic_id, body.label)
        return {"ic_id": ic_id, "label": body.label, "version": version}

    @app.get(API_PREFIX + "/patients/{patient_id}/decision")
    def decision(patient_id: str) -> dict:
        fold = _fold_or_404(patient_id)
        candidates = [r for r in fold.records if r.fused == "SOZ"]
        confirmed = sorted(
            r.ic_id
            for r in fold.records
            if store.label_of(r.ic_id) == "SOZ"
        )
        labeled = sum(1 for r in candidates if store.label_of(r.ic_id) is not None)
        total = len(fold.records)
        true_soz = sorted(r.ic_id for r in fold.records if r.truth == "SOZ")
        agreement = None
        if true_soz or confirmed:
            union = set(true_soz) | set(confirmed)
            inter = set(true_soz) & set(confirmed)
            agreement = len(inter) / len(union) if union else 1.0
        return {
            "patient_id": patient_id,
            "confirmed_soz": confirmed,
            "effort": {
                "candidates": len(candidates),
                "labeled": labeled,
                "total": total,
                "fraction": len(candidates) / total if total else 0.0,
            },
            "agreement": agreement,
            "true_soz": true_soz,
            "session_version": store.session.version,
        }

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
