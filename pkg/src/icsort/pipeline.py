"""Step 1-3 orchestration: montage + feature preparation, leave-one-patient-out
cross-validation, the posterior-threshold label fusion, ablation masks,
training-size sweeps, and the comparison baselines."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classify, network, spatial, temporal
from .cohort import Cohort, ICLabel, iter_patients, label_from_name
from .errors import ConfigError, TrainingError

STEP1_NOISE = "Noise"
STEP1_NONNOISE = "NonNoise"


@dataclass(frozen=True)
class FusionParams:
    posterior_threshold: float = 0.9

    def __post_init__(self):
        if not 0 < self.posterior_threshold < 1:
            raise ValueError("posterior_threshold must be in (0, 1)")


@dataclass(frozen=True)
class AblationMask:
    activelet_gini: bool = True
    sine_gini: bool = True
    n_clusters: bool = True
    wm_overlap: bool = True
    hf_dominant: bool = True

    def __post_init__(self):
        if not any(self.column_flags()):
            raise ValueError("ablation mask must keep at least one feature")

    def column_flags(self) -> tuple[bool, ...]:
        # Order matches classify.FEATURE_NAMES.
        return (
            self.n_clusters,
            self.wm_overlap,
            self.activelet_gini,
            self.sine_gini,
            self.hf_dominant,
        )

    def columns(self) -> np.ndarray:
        return np.flatnonzero(np.array(self.column_flags()))


NAMED_MASKS: dict[str, AblationMask] = {
    "full": AblationMask(),
    "no-temporal": AblationMask(activelet_gini=False, sine_gini=False, hf_dominant=False),
    "no-activelet": AblationMask(activelet_gini=False),
    "no-sine": AblationMask(sine_gini=False),
    "no-hf": AblationMask(hf_dominant=False),
    "no-spatial": AblationMask(n_clusters=False, wm_overlap=False),
    "no-clusters": AblationMask(n_clusters=False),
    "no-wm-overlap": AblationMask(wm_overlap=False),
}


def fuse_labels(
    step1: str, step2: ICLabel | str, p_soz: float | None, params: FusionParams
) -> ICLabel:
    """Combine the noise filter's verdict with the SVM label.

    NonNoise keeps the step-2 label.  A step-1 Noise verdict stands unless
    step 2 says SOZ with posterior >= threshold; Noise + RSN is always Noise
    because step 2 never emits Noise labels.
    """
    if isinstance(step2, str):
        step2 = label_from_name(step2)
    if step1 == STEP1_NONNOISE:
        return step2
    if step1 != STEP1_NOISE:
        raise ValueError(f"unknown step-1 label {step1!r}")
    if step2 == ICLabel.SOZ:
        if p_soz is None:
            raise ValueError("fusion needs a posterior when step 2 says SOZ")
        return ICLabel.SOZ if p_soz >= params.posterior_threshold else ICLabel.NOISE
    return ICLabel.NOISE


# ---------------------------------------------------------------------------
# Cohort preparation (montages + expert features, computed once per IC)
# ---------------------------------------------------------------------------


def compute_features(ic, sp: spatial.SpatialParams, tp: temporal.TemporalParams) -> np.ndarray:
    n_clusters, wm = spatial.spatial_features(ic, sp)
    activelet_g, sine_g, hf = temporal.temporal_features(ic, tp)
    return np.array([n_clusters, wm, activelet_g, sine_g, float(hf)], dtype=np.float64)


@dataclass
class PreparedCohort:
    ic_ids: list[str]
    ic_patient: np.ndarray  # per-IC patient id (object array)
    patients: list[str]
    patient_meta: dict[str, dict]
    truth: np.ndarray  # per-IC ICLabel codes
    features: np.ndarray  # (n_ics, len(FEATURE_NAMES))
    montages: np.ndarray  # (n_ics, input_h, input_w) float32
    tr_seconds: float
    spatial_params: spatial.SpatialParams
    temporal_params: temporal.TemporalParams

    def rows_for(self, pid: str) -> np.ndarray:
        return np.flatnonzero(self.ic_patient == pid)


def prepare_cohort(
    source: Cohort | str | Path,
    net_config: network.NetworkConfig,
    sp: spatial.SpatialParams | None = None,
    tp: temporal.TemporalParams | None = None,
) -> PreparedCohort:
    """Render every IC's montage and expert feature vector.  Features do not
    depend on the CV fold, so this runs exactly once per cohort."""
    patients = source.patients if isinstance(source, Cohort) else iter_patients(source)

    ic_ids: list[str] = []
    ic_patient: list[str] = []
    order: list[str] = []
    meta: dict[str, dict] = {}
    truth: list[int] = []
    feats: list[np.ndarray] = []
    montages: list[np.ndarray] = []
    tr = None

    for patient in patients:
        order.append(patient.patient_id)
        meta[patient.patient_id] = dict(patient.meta)
        for ic in patient.ics:
            if sp is None:
                sp = spatial.params_for_dims(ic.slices.shape[1], ic.slices.shape[2])
            if tp is None:
                tp = temporal.TemporalParams(tr_seconds=ic.tr_seconds)
            if tr is None:
                tr = ic.tr_seconds
            ic_ids.append(ic.ic_id)
            ic_patient.append(patient.patient_id)
            truth.append(int(ic.truth))
            feats.append(compute_features(ic, sp, tp))
            montages.append(network.montage_input(ic, net_config).astype(np.float32))

    if not ic_ids:
        raise ConfigError("cohort contains no ICs")
    return PreparedCohort(
        ic_ids=ic_ids,
        ic_patient=np.array(ic_patient, dtype=object),
        patients=order,
        patient_meta=meta,
        truth=np.array(truth, dtype=int),
        features=np.vstack(feats),
        montages=np.stack(montages),
        tr_seconds=float(tr),
        spatial_params=sp,
        temporal_params=tp,
    )


# ---------------------------------------------------------------------------
# Fold results
# ---------------------------------------------------------------------------


@dataclass
class ICRecord:
    ic_id: str
    truth: str
    step1: str | None
    step2: str | None
    p_soz: float | None
    fused: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ICRecord":
        return cls(**d)


@dataclass
class FoldResult:
    patient_id: str
    status: str = "ok"  # "ok" | "failed"
    reason: str | None = None
    records: list[ICRecord] = field(default_factory=list)
    train_ic_ids: list[str] = field(default_factory=list)
    train_fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "status": self.status,
            "reason": self.reason,
            "records": [r.to_dict() for r in self.records],
            "train_ic_ids": self.train_ic_ids,
            "train_fingerprint": self.train_fingerprint,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldResult":
        return cls(
            patient_id=d["patient_id"],
            status=d["status"],
            reason=d.get("reason"),
            records=[ICRecord.from_dict(r) for r in d["records"]],
            train_ic_ids=list(d.get("train_ic_ids", [])),
            train_fingerprint=d.get("train_fingerprint", ""),
            meta=dict(d.get("meta", {})),
        )


def _fingerprint(ids: list[str]) -> str:
    return hashlib.sha256("\n".join(sorted(ids)).encode()).hexdigest()


def save_fold_results(results: list[FoldResult], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fr in results:
        path = out_dir / f"fold_{fr.patient_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(fr.to_dict(), sort_keys=True, indent=2) + "\n")
        tmp.replace(path)


def load_fold_results(directory: str | Path) -> list[FoldResult]:
    directory = Path(directory)
    results = []
    for path in sorted(directory.glob("fold_*.json")):
        results.append(FoldResult.from_dict(json.loads(path.read_text())))
    if not results:
        raise ConfigError(f"no fold_*.json files under {directory}")
    return results


def audit_leakage(results: list[FoldResult]) -> int:
    """Verify zero held-out ICs appear in any fold's training inputs and that
    the recorded training fingerprints match.  Returns the fold count."""
    for fr in results:
        train = set(fr.train_ic_ids)
        held = {r.ic_id for r in fr.records}
        overlap = train & held
        if overlap:
            raise AssertionError(f"fold {fr.patient_id}: leakage of {sorted(overlap)[:5]}")
        if fr.train_ic_ids and fr.train_fingerprint != _fingerprint(fr.train_ic_ids):
            raise AssertionError(f"fold {fr.patient_id}: training fingerprint mismatch")
    return len(results)


# ---------------------------------------------------------------------------
# LOPO cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunSettings:
    network: network.NetworkConfig = network.DESK_PROFILE
    fusion: FusionParams = FusionParams()
    mask: AblationMask = NAMED_MASKS["full"]
    svm_c: float = 1.0
    smote_k: int = 5
    seed: int = 0
    n_jobs: int = 1


def _fold_seeds(seed: int, fold_idx: int) -> tuple[int, int, int]:
    state = np.random.SeedSequence([seed, fold_idx]).generate_state(3)
    return int(state[0]), int(state[1]), int(state[2])


def _train_step2(
    prepared: PreparedCohort,
    train_rows: np.ndarray,
    settings: RunSettings,
    smote_seed: int,
    svm_seed: int,
) -> classify.SvmModel:
    cols = settings.mask.columns()
    truth = prepared.truth[train_rows]
    step2_rows = train_rows[(truth == ICLabel.RSN) | (truth == ICLabel.SOZ)]
    labels = (prepared.truth[step2_rows] == ICLabel.SOZ).astype(int)
    if len(np.unique(labels)) < 2:
        raise TrainingError("training fold lacks an RSN or SOZ class")
    X = prepared.features[np.ix_(step2_rows, cols)]
    standardizer = classify.Standardizer.fit(X)
    Xs = standardizer.transform(X)

    n_rsn = int((labels == 0).sum())
    n_soz = int((labels == 1).sum())
    if n_soz < n_rsn:
        synthetic = classify.smote_oversample(
            Xs[labels == 1], n_rsn, k=settings.smote_k, seed=smote_seed
        )
        Xs = np.vstack([Xs, synthetic])
        labels = np.concatenate([labels, np.ones(len(synthetic), dtype=int)])
    model = classify.train_svm(Xs, labels, C=settings.svm_c, seed=svm_seed)
    model.standardizer = standardizer
    return model


def train_step2(prepared: PreparedCohort, settings: RunSettings) -> classify.SvmModel:
    """Step-2 SVM trained on the whole cohort (no held-out patient); used by
    the train-step2 command for model persistence."""
    smote_seed, svm_seed = _fold_seeds(settings.seed, 0)[1:]
    return _train_step2(
        prepared, np.arange(len(prepared.ic_ids)), settings, smote_seed, svm_seed
    )


def _run_fold(
    prepared: PreparedCohort,
    fold_idx: int,
    test_pid: str,
    settings: RunSettings,
    train_pids: list[str] | None = None,
    step1_probs: np.ndarray | None = None,
) -> tuple[FoldResult, np.ndarray | None]:
    if train_pids is None:
        train_pids = [p for p in prepared.patients if p != test_pid]
    test_rows = prepared.rows_for(test_pid)
    train_rows = np.flatnonzero(np.isin(prepared.ic_patient, train_pids))
    train_ids = [prepared.ic_ids[i] for i in train_rows]

    net_seed, smote_seed, svm_seed = _fold_seeds(settings.seed, fold_idx)
    fold = FoldResult(
        patient_id=test_pid,
        train_ic_ids=train_ids,
        train_fingerprint=_fingerprint(train_ids),
        meta=prepared.patient_meta.get(test_pid, {}),
    )
    try:
        if step1_probs is None:
            net_config = dataclasses.replace(settings.network, seed=net_seed)
            noise01 = (prepared.truth[train_rows] != ICLabel.NOISE).astype(int)
            net = network.train(net_config, prepared.montages[train_rows], noise01)
            step1_probs = network.predict(net, prepared.montages[test_rows])
        svm = _train_step2(prepared, train_rows, settings, smote_seed, svm_seed)

        cols = settings.mask.columns()
        labels01, p_soz = classify.predict_posterior(
            svm, prepared.features[np.ix_(test_rows, cols)]
        )
        for k, row in enumerate(test_rows):
            step1 = STEP1_NONNOISE if step1_probs[k] > 0.5 else STEP1_NOISE
            step2 = ICLabel.SOZ if labels01[k] == 1 else ICLabel.RSN
            fused = fuse_labels(step1, step2, float(p_soz[k]), settings.fusion)
            fold.records.append(
                ICRecord(
                    ic_id=prepared.ic_ids[row],
                    truth=str(ICLabel(prepared.truth[row])),
                    step1=step1,
                    step2=str(step2),
                    p_soz=float(p_soz[k]),
                    fused=str(fused),
                )
            )
    except TrainingError as exc:
        fold.status = "failed"
        fold.reason = str(exc)
        fold.records = []
        return fold, None
    return fold, step1_probs


_WORKER_STATE: dict = {}


def _worker_init(prepared: PreparedCohort, settings: RunSettings) -> None:
    _WORKER_STATE["prepared"] = prepared
    _WORKER_STATE["settings"] = settings


def _worker_fold(args):
    fold_idx, test_pid, train_pids, step1_probs = args
    return _run_fold(
        _WORKER_STATE["prepared"],
        fold_idx,
        test_pid,
        _WORKER_STATE["settings"],
        train_pids=train_pids,
        step1_probs=step1_probs,
    )


def run_lopo_cv(
    source: Cohort | str | Path | PreparedCohort,
    settings: RunSettings = RunSettings(),
    out_dir: str | Path | None = None,
    step1_cache: dict[str, np.ndarray] | None = None,
    train_pids_by_fold: dict[str, list[str]] | None = None,
) -> tuple[list[FoldResult], dict[str, np.ndarray]]:
    """Leave-one-patient-out CV of the full three-step pipeline.

    Returns (fold results, step-1 probabilities per held-out patient).  The
    step-1 cache can be fed back in to rerun step 2 under a different feature
    mask without retraining the noise filter, which does not depend on it.
    """
    prepared = (
        source
        if isinstance(source, PreparedCohort)
        else prepare_cohort(source, settings.network)
    )
    if len(prepared.patients) < 2:
        raise ConfigError("LOPO CV needs at least 2 patients")

    jobs = []
    for fold_idx, pid in enumerate(prepared.patients):
        cached = step1_cache.get(pid) if step1_cache else None
        train_pids = train_pids_by_fold.get(pid) if train_pids_by_fold else None
        jobs.append((fold_idx, pid, train_pids, cached))

    results: list[FoldResult] = []
    step1_out: dict[str, np.ndarray] = {}
    if settings.n_jobs > 1:
        with ProcessPoolExecutor(
            max_workers=settings.n_jobs,
            initializer=_worker_init,
            initargs=(prepared, settings),
        ) as pool:
            for fold, probs in pool.map(_worker_fold, jobs):
                results.append(fold)
                if probs is not None:
                    step1_out[fold.patient_id] = probs
                if out_dir is not None:
                    save_fold_results([fold], out_dir)
    else:
        for job in jobs:
            fold, probs = _run_fold(prepared, job[0], job[1], settings, job[2], job[3])
            results.append(fold)
            if probs is not None:
                step1_out[fold.patient_id] = probs
            if out_dir is not None:
                save_fold_results([fold], out_dir)
    return results, step1_out


def refuse_with_threshold(results: list[FoldResult], fusion: FusionParams) -> list[FoldResult]:
    """Re-run only the fusion rule on stored step outputs (cheap threshold sweep)."""
    out = []
    for fr in results:
        nfr = FoldResult(
            patient_id=fr.patient_id,
            status=fr.status,
            reason=fr.reason,
            train_ic_ids=fr.train_ic_ids,
            train_fingerprint=fr.train_fingerprint,
            meta=fr.meta,
        )
        for r in fr.records:
            if r.step1 is None or r.step2 is None:
                raise ConfigError("cannot re-fuse baseline records without step outputs")
            fused = fuse_labels(r.step1, r.step2, r.p_soz, fusion)
            nfr.records.append(dataclasses.replace(r, fused=str(fused)))
        out.append(nfr)
    return out


def sweep_training_size(
    source: Cohort | str | Path | PreparedCohort,
    fractions: list[float],
    settings: RunSettings = RunSettings(),
) -> dict[float, list[FoldResult]]:
    """LOPO CV with the training patients subsampled (patient level, seeded)
    before every fold; evaluation sets are unchanged."""
    prepared = (
        source
        if isinstance(source, PreparedCohort)
        else prepare_cohort(source, settings.network)
    )
    out: dict[float, list[FoldResult]] = {}
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ConfigError(f"training fraction {fraction} outside (0, 1]")
        if fraction == 1.0:
            results, _ = run_lopo_cv(prepared, settings)
        else:
            by_fold: dict[str, list[str]] = {}
            for fold_idx, pid in enumerate(prepared.patients):
                pool = [p for p in prepared.patients if p != pid]
                n_keep = max(1, round(fraction * len(pool)))
                rng = np.random.Generator(
                    np.random.PCG64(
                        np.random.SeedSequence(
                            [settings.seed, fold_idx, int(round(fraction * 10**6))]
                        )
                    )
                )
                keep = sorted(rng.choice(len(pool), size=n_keep, replace=False).tolist())
                by_fold[pid] = [pool[i] for i in keep]
            results, _ = run_lopo_cv(prepared, settings, train_pids_by_fold=by_fold)
        out[fraction] = results
    return out


# ---------------------------------------------------------------------------
# Comparison baselines
# ---------------------------------------------------------------------------


def _run_baseline_fold_cnn3(
    prepared: PreparedCohort, fold_idx: int, test_pid: str, settings: RunSettings
) -> FoldResult:
    test_rows = prepared.rows_for(test_pid)
    train_rows = np.flatnonzero(prepared.ic_patient != test_pid)
    train_ids = [prepared.ic_ids[i] for i in train_rows]
    net_seed, _, _ = _fold_seeds(settings.seed, fold_idx)
    fold = FoldResult(
        patient_id=test_pid,
        train_ic_ids=train_ids,
        train_fingerprint=_fingerprint(train_ids),
        meta=prepared.patient_meta.get(test_pid, {}),
    )
    try:
        y = prepared.truth[train_rows]
        counts = np.bincount(y, minlength=3).astype(float)
        if (counts == 0).any():
            raise TrainingError("3-class CNN fold lacks a class")
        weights = tuple(float(w) for w in counts.sum() / (3.0 * counts))
        config = dataclasses.replace(
            settings.network, n_classes=3, seed=net_seed, class_weights=weights
        )
        net = network.train(config, prepared.montages[train_rows], y)
        probs = network.predict(net, prepared.montages[test_rows])
        pred = probs.argmax(axis=1)
        for k, row in enumerate(test_rows):
            fold.records.append(
                ICRecord(
                    ic_id=prepared.ic_ids[row],
                    truth=str(ICLabel(prepared.truth[row])),
                    step1=None,
                    step2=None,
                    p_soz=float(probs[k, int(ICLabel.SOZ)]),
                    fused=str(ICLabel(int(pred[k]))),
                )
            )
    except TrainingError as exc:
        fold.status = "failed"
        fold.reason = str(exc)
        fold.records = []
    return fold


def _run_baseline_fold_lssvm(
    prepared: PreparedCohort, fold_idx: int, test_pid: str, settings: RunSettings
) -> FoldResult:
    test_rows = prepared.rows_for(test_pid)
    train_rows = np.flatnonzero(prepared.ic_patient != test_pid)
    train_ids = [prepared.ic_ids[i] for i in train_rows]
    _, smote_seed, _ = _fold_seeds(settings.seed, fold_idx)
    fold = FoldResult(
        patient_id=test_pid,
        train_ic_ids=train_ids,
        train_fingerprint=_fingerprint(train_ids),
        meta=prepared.patient_meta.get(test_pid, {}),
    )
    try:
        model = classify.train_ls_svm_baseline(
            prepared.features[train_rows],
            prepared.truth[train_rows],
            gamma=1.0,
            seed=smote_seed,
            smote_k=settings.smote_k,
        )
        pred = model.predict(prepared.features[test_rows])
        for k, row in enumerate(test_rows):
            fold.records.append(
                ICRecord(
                    ic_id=prepared.ic_ids[row],
                    truth=str(ICLabel(prepared.truth[row])),
                    step1=None,
                    step2=None,
                    p_soz=None,
                    fused=str(ICLabel(int(pred[k]))),
                )
            )
    except TrainingError as exc:
        fold.status = "failed"
        fold.reason = str(exc)
        fold.records = []
    return fold


def run_baselines(
    source: Cohort | str | Path | PreparedCohort,
    settings: RunSettings = RunSettings(),
) -> dict[str, list[FoldResult]]:
    """LOPO results for the 3-class cost-sensitive CNN and the LS-SVM."""
    prepared = (
        source
        if isinstance(source, PreparedCohort)
        else prepare_cohort(source, settings.network)
    )
    cnn3 = [
        _run_baseline_fold_cnn3(prepared, i, pid, settings)
        for i, pid in enumerate(prepared.patients)
    ]
    lssvm = [
        _run_baseline_fold_lssvm(prepared, i, pid, settings)
        for i, pid in enumerate(prepared.patients)
    ]
    return {"cnn3": cnn3, "ls_svm": lssvm}
