"""Patient-level and IC-level metrics, effort reduction, ROC assembly, the
one-sided Welch t-test, and report emission.

Patient classification rule: with S the fused-SOZ set and G the true-SOZ set
of a patient, the patient is a TP when S and G intersect, FN when G is
non-empty and S is empty, FP when S is non-empty but misses G entirely, and
TN when both are empty.  Ratios with zero denominators are reported as
absent (None), never coerced to 0 or 1.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .cohort import ICLabel
from .pipeline import FoldResult

REPORT_SCHEMA_VERSION = 1

SOZ = str(ICLabel.SOZ)


def _ok_folds(results: list[FoldResult]) -> list[FoldResult]:
    return [fr for fr in results if fr.status == "ok"]


def _ratio(num: int | float, den: int | float) -> float | None:
    return None if den == 0 else num / den


# ---------------------------------------------------------------------------
# Patient-level metrics
# ---------------------------------------------------------------------------


@dataclass
class PatientConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class PlmRates:
    accuracy: float | None
    precision: float | None
    sensitivity: float | None


def classify_patient(pred_soz: set[str], true_soz: set[str]) -> str:
    if pred_soz & true_soz:
        return "tp"
    if pred_soz:
        return "fp"
    if true_soz:
        return "fn"
    return "tn"


def patient_level_metrics(results: list[FoldResult]) -> tuple[PatientConfusion, PlmRates]:
    folds = _ok_folds(results)
    if not folds:
        raise ValueError("no successful folds to evaluate")
    conf = PatientConfusion()
    for fr in folds:
        pred = {r.ic_id for r in fr.records if r.fused == SOZ}
        true = {r.ic_id for r in fr.records if r.truth == SOZ}
        cell = classify_patient(pred, true)
        setattr(conf, cell, getattr(conf, cell) + 1)
    rates = PlmRates(
        accuracy=_ratio(conf.tp + conf.tn, conf.n),
        precision=_ratio(conf.tp, conf.tp + conf.fp),
        sensitivity=_ratio(conf.tp, conf.tp + conf.fn),
    )
    return conf, rates


def plm_from_counts(tp: int, fp: int, fn: int, tn: int) -> PlmRates:
    conf = PatientConfusion(tp=tp, fp=fp, fn=fn, tn=tn)
    return PlmRates(
        accuracy=_ratio(conf.tp + conf.tn, conf.n),
        precision=_ratio(conf.tp, conf.tp + conf.fp),
        sensitivity=_ratio(conf.tp, conf.tp + conf.fn),
    )


def per_patient_correct(results: list[FoldResult]) -> list[float]:
    """1.0 where the patient lands in TP or TN, else 0.0 (per-patient samples
    for significance tests on the patient-level outcome)."""
    out = []
    for fr in _ok_folds(results):
        pred = {r.ic_id for r in fr.records if r.fused == SOZ}
        true = {r.ic_id for r in fr.records if r.truth == SOZ}
        out.append(1.0 if classify_patient(pred, true) in ("tp", "tn") else 0.0)
    return out


# ---------------------------------------------------------------------------
# IC-level metrics
# ---------------------------------------------------------------------------

IC_METRIC_NAMES = ("accuracy", "precision", "sensitivity", "specificity", "f1")


@dataclass
class PatientICStats:
    patient_id: str
    tp: int
    fp: int
    fn: int
    tn: int
    mm_soz: int
    metrics: dict[str, float | None]


@dataclass
class ICMetrics:
    per_patient: list[PatientICStats]
    mean: dict[str, float | None]
    sd: dict[str, float | None]
    mm_soz_mean: float
    mm_soz_sd: float | None


def _mean_sd(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if len(values) > 1 else None
    return mean, sd


def ic_level_metrics(results: list[FoldResult]) -> ICMetrics:
    """Binary SOZ-vs-rest confusion per patient, averaged across patients
    (mean and SD); MM-SOZ is the per-patient machine-marked SOZ count."""
    per_patient = []
    for fr in _ok_folds(results):
        tp = fp = fn = tn = 0
        for r in fr.records:
            pred = r.fused == SOZ
            true = r.truth == SOZ
            if pred and true:
                tp += 1
            elif pred:
                fp += 1
            elif true:
                fn += 1
            else:
                tn += 1
        prec = _ratio(tp, tp + fp)
        sens = _ratio(tp, tp + fn)
        f1 = None
        if prec is not None and sens is not None and (prec + sens) > 0:
            f1 = 2 * prec * sens / (prec + sens)
        per_patient.append(
            PatientICStats(
                patient_id=fr.patient_id,
                tp=tp,
                fp=fp,
                fn=fn,
                tn=tn,
                mm_soz=tp + fp,
                metrics={
                    "accuracy": _ratio(tp + tn, tp + fp + fn + tn),
                    "precision": prec,
                    "sensitivity": sens,
                    "specificity": _ratio(tn, tn + fp),
                    "f1": f1,
                },
            )
        )
    if not per_patient:
        raise ValueError("no successful folds to evaluate")
    mean: dict[str, float | None] = {}
    sd: dict[str, float | None] = {}
    for name in IC_METRIC_NAMES:
        vals = [p.metrics[name] for p in per_patient if p.metrics[name] is not None]
        mean[name], sd[name] = _mean_sd(vals)
    mm_mean, mm_sd = _mean_sd([float(p.mm_soz) for p in per_patient])
    return ICMetrics(per_patient=per_patient, mean=mean, sd=sd, mm_soz_mean=mm_mean, mm_soz_sd=mm_sd)


def effort_reduction(results: list[FoldResult]) -> tuple[list[float], float, float | None]:
    """Per-patient total ICs / max(MM-SOZ, 1); MM-SOZ = 0 counts as a ratio of
    the full IC count (the machine rejected everything)."""
    ratios = []
    for fr in _ok_folds(results):
        total = len(fr.records)
        mm = sum(1 for r in fr.records if r.fused == SOZ)
        ratios.append(total / max(mm, 1))
    if not ratios:
        raise ValueError("no successful folds to evaluate")
    mean, sd = _mean_sd(ratios)
    return ratios, mean, sd


# ---------------------------------------------------------------------------
# ROC assembly
# ---------------------------------------------------------------------------


@dataclass
class RocPoint:
    sweep_value: float
    sensitivity: float | None
    false_positive_rate: float | None
    mm_soz_mean: float
    training_fraction: float


def roc_assemble(
    sweeps: list[tuple[float, list[FoldResult], float]],
) -> list[RocPoint]:
    """One ROC point per sweep entry (sweep value, fold results, training
    fraction); points come back sorted by false-positive rate."""
    if len(sweeps) < 2:
        raise ValueError("ROC assembly needs at least 2 sweep points")
    points = []
    for sweep_value, results, fraction in sweeps:
        ilm = ic_level_metrics(results)
        fprs = [
            1.0 - p.metrics["specificity"]
            for p in ilm.per_patient
            if p.metrics["specificity"] is not None
        ]
        points.append(
            RocPoint(
                sweep_value=float(sweep_value),
                sensitivity=ilm.mean["sensitivity"],
                false_positive_rate=float(np.mean(fprs)) if fprs else None,
                mm_soz_mean=ilm.mm_soz_mean,
                training_fraction=float(fraction),
            )
        )
    points.sort(key=lambda p: (p.false_positive_rate is None, p.false_positive_rate, p.sweep_value))
    return points


# ---------------------------------------------------------------------------
# Welch one-sided t-test
# ---------------------------------------------------------------------------


@dataclass
class TTestResult:
    t: float
    df: float
    p: float
    degenerate: bool = False  # zero variance in both samples


def one_sided_t_test(a: list[float], b: list[float]) -> TTestResult:
    """Welch unequal-variance t statistic with one-sided alternative "A > B"."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    diff = a.mean() - b.mean()
    if se2 == 0:
        if diff == 0:
            return TTestResult(t=0.0, df=float(na + nb - 2), p=0.5, degenerate=True)
        return TTestResult(
            t=math.inf if diff > 0 else -math.inf,
            df=float(na + nb - 2),
            p=0.0 if diff > 0 else 1.0,
            degenerate=True,
        )
    t = diff / math.sqrt(se2)
    df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = float(stats.t.sf(t, df))
    return TTestResult(t=float(t), df=float(df), p=p)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


@dataclass
class ReportBundle:
    """Everything emit_report renders; every section is optional except the
    main method results."""

    methods: dict[str, list[FoldResult]]  # method name -> fold results
    ablations: dict[str, list[FoldResult]] = field(default_factory=dict)
    roc: list[RocPoint] = field(default_factory=list)
    config: dict = field(default_factory=dict)


def _plm_row(name: str, results: list[FoldResult]) -> dict:
    conf, rates = patient_level_metrics(results)
    failed = [fr.patient_id for fr in results if fr.status != "ok"]
    return {
        "method": name,
        "n": conf.n,
        "tp": conf.tp,
        "fp": conf.fp,
        "fn": conf.fn,
        "tn": conf.tn,
        "accuracy": rates.accuracy,
        "precision": rates.precision,
        "sensitivity": rates.sensitivity,
        "failed_folds": failed,
    }


def _ilm_row(name: str, results: list[FoldResult]) -> dict:
    ilm = ic_level_metrics(results)
    _, effort_mean, effort_sd = effort_reduction(results)
    row = {"method": name, "mm_soz_mean": ilm.mm_soz_mean, "mm_soz_sd": ilm.mm_soz_sd}
    for metric in IC_METRIC_NAMES:
        row[metric] = ilm.mean[metric]
        row[f"{metric}_sd"] = ilm.sd[metric]
    row["effort_reduction_mean"] = effort_mean
    row["effort_reduction_sd"] = effort_sd
    return row


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})
    path.write_text(buf.getvalue())


def emit_report(bundle: ReportBundle, out_dir: str | Path) -> dict:
    """Write report.json plus plm/ilm/roc/ablation CSVs; emission is
    deterministic, so identical inputs give byte-identical files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    method_names = sorted(bundle.methods)
    plm_rows = [_plm_row(m, bundle.methods[m]) for m in method_names]
    ilm_rows = [_ilm_row(m, bundle.methods[m]) for m in method_names]

    comparisons = []
    main = method_names[0] if len(method_names) == 1 else None
    if "deepxsoz" in bundle.methods:
        main = "deepxsoz"
    if main is not None:
        main_plm = per_patient_correct(bundle.methods[main])
        main_sens = [
            p.metrics["sensitivity"]
            for p in ic_level_metrics(bundle.methods[main]).per_patient
            if p.metrics["sensitivity"] is not None
        ]
        for other in method_names:
            if other == main:
                continue
            row = {"method_a": main, "method_b": other}
            try:
                tt = one_sided_t_test(main_plm, per_patient_correct(bundle.methods[other]))
                row["plm_correct_t"] = tt.t
                row["plm_correct_p"] = tt.p
            except ValueError:
                row["plm_correct_t"] = row["plm_correct_p"] = None
            other_sens = [
                p.metrics["sensitivity"]
                for p in ic_level_metrics(bundle.methods[other]).per_patient
                if p.metrics["sensitivity"] is not None
            ]
            try:
                tt = one_sided_t_test(main_sens, other_sens)
                row["ilm_sensitivity_t"] = tt.t
                row["ilm_sensitivity_p"] = tt.p
            except ValueError:
                row["ilm_sensitivity_t"] = row["ilm_sensitivity_p"] = None
            comparisons.append(row)

    ablation_rows = []
    for mask_name in sorted(bundle.ablations):
        res = bundle.ablations[mask_name]
        conf, rates = patient_level_metrics(res)
        ilm = ic_level_metrics(res)
        ablation_rows.append(
            {
                "mask": mask_name,
                "plm_accuracy": rates.accuracy,
                "plm_precision": rates.precision,
                "plm_sensitivity": rates.sensitivity,
                "ilm_mm_soz": ilm.mm_soz_mean,
                "ilm_precision": ilm.mean["precision"],
                "ilm_sensitivity": ilm.mean["sensitivity"],
            }
        )

    roc_rows = [
        {
            "sweep_value": p.sweep_value,
            "sensitivity": p.sensitivity,
            "false_positive_rate": p.false_positive_rate,
            "mm_soz_mean": p.mm_soz_mean,
            "training_fraction": p.training_fraction,
        }
        for p in bundle.roc
    ]

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": bundle.config,
        "plm": plm_rows,
        "ilm": ilm_rows,
        "comparisons": comparisons,
        "ablation": ablation_rows,
        "roc": roc_rows,
    }
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")

    _write_csv(
        out_dir / "plm.csv",
        ["method", "n", "tp", "fp", "fn", "tn", "accuracy", "precision", "sensitivity"],
        plm_rows,
    )
    ilm_fields = ["method", "mm_soz_mean", "mm_soz_sd"]
    for metric in IC_METRIC_NAMES:
        ilm_fields += [metric, f"{metric}_sd"]
    ilm_fields += ["effort_reduction_mean", "effort_reduction_sd"]
    _write_csv(out_dir / "ilm.csv", ilm_fields, ilm_rows)
    if ablation_rows:
        _write_csv(
            out_dir / "ablation.csv",
            [
                "mask",
                "plm_accuracy",
                "plm_precision",
                "plm_sensitivity",
                "ilm_mm_soz",
                "ilm_precision",
                "ilm_sensitivity",
            ],
            ablation_rows,
        )
    if roc_rows:
        _write_csv(
            out_dir / "roc.csv",
            ["sweep_value", "sensitivity", "false_positive_rate", "mm_soz_mean", "training_fraction"],
            roc_rows,
        )
    return report
