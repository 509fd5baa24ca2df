import json

import numpy as np
import pytest
from scipy import stats

from icsort import evaluate, pipeline
from icsort.evaluate import ReportBundle
from icsort.pipeline import FoldResult, ICRecord


def make_fold(pid, rows):
    """rows: list of (truth, fused) label pairs."""
    records = [
        ICRecord(f"{pid}-ic{k:03d}", truth, "NonNoise", fused if fused != "Noise" else "RSN",
                 0.95 if fused == "SOZ" else 0.05, fused)
        for k, (truth, fused) in enumerate(rows)
    ]
    return FoldResult(patient_id=pid, records=records)


def random_fold_results(rng, n_patients=8, n_ics=20):
    labels = ["Noise", "RSN", "SOZ"]
    folds = []
    for k in range(n_patients):
        rows = [(labels[rng.integers(0, 3)], labels[rng.integers(0, 3)]) for _ in range(n_ics)]
        folds.append(make_fold(f"P{k:03d}", rows))
    return folds


class TestPatientLevel:
    def test_abstract_triple_from_counts(self):
        rates = evaluate.plm_from_counts(tp=44, fp=3, fn=5, tn=0)
        assert rates.sensitivity == pytest.approx(0.898, abs=5e-4)
        assert rates.precision == pytest.approx(0.936, abs=5e-4)
        assert rates.accuracy == pytest.approx(0.846, abs=5e-4)

    def test_all_tp(self):
        folds = [make_fold(f"P{k}", [("SOZ", "SOZ"), ("RSN", "RSN")]) for k in range(5)]
        conf, rates = evaluate.patient_level_metrics(folds)
        assert (conf.tp, conf.fp, conf.fn, conf.tn) == (5, 0, 0, 0)
        assert rates.accuracy == rates.precision == rates.sensitivity == 1.0

    def test_cells_exclusive_exhaustive(self):
        rng = np.random.default_rng(0)
        folds = random_fold_results(rng)
        conf, _ = evaluate.patient_level_metrics(folds)
        assert conf.n == len(folds)

    def test_matches_brute_force_rule(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            folds = random_fold_results(rng, n_patients=6, n_ics=10)
            conf, _ = evaluate.patient_level_metrics(folds)
            # independent re-derivation of the patient rule
            tp = fp = fn = tn = 0
            for fr in folds:
                S = {r.ic_id for r in fr.records if r.fused == "SOZ"}
                G = {r.ic_id for r in fr.records if r.truth == "SOZ"}
                if S & G:
                    tp += 1
                elif len(S) > 0:
                    fp += 1
                elif len(G) > 0:
                    fn += 1
                else:
                    tn += 1
            assert (conf.tp, conf.fp, conf.fn, conf.tn) == (tp, fp, fn, tn)

    def test_undefined_ratios_absent(self):
        folds = [make_fold("P0", [("RSN", "RSN")])]  # TN only
        conf, rates = evaluate.patient_level_metrics(folds)
        assert conf.tn == 1
        assert rates.precision is None and rates.sensitivity is None
        assert rates.accuracy == 1.0

    def test_fp_to_tn_dominance(self):
        base = evaluate.plm_from_counts(tp=10, fp=3, fn=2, tn=1)
        fixed = evaluate.plm_from_counts(tp=10, fp=2, fn=2, tn=2)
        assert fixed.precision >= base.precision
        assert fixed.sensitivity >= base.sensitivity


class TestIcLevel:
    def test_perfect_patient(self):
        rows = [("SOZ", "SOZ")] * 5 + [("RSN", "RSN")] * 95
        ilm = evaluate.ic_level_metrics([make_fold("P0", rows), make_fold("P1", rows)])
        p = ilm.per_patient[0]
        assert p.metrics["sensitivity"] == 1.0
        assert p.metrics["precision"] == 1.0
        assert p.mm_soz == 5
        assert ilm.mm_soz_mean == 5.0

    def test_cells_sum_to_ic_count(self):
        rng = np.random.default_rng(2)
        folds = random_fold_results(rng, n_patients=5, n_ics=17)
        ilm = evaluate.ic_level_metrics(folds)
        for p in ilm.per_patient:
            assert p.tp + p.fp + p.fn + p.tn == 17

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(3)
        for trial in range(100):
            folds = random_fold_results(rng, n_patients=4, n_ics=12)
            ilm = evaluate.ic_level_metrics(folds)
            for fr, p in zip(folds, ilm.per_patient):
                tp = sum(1 for r in fr.records if r.truth == "SOZ" and r.fused == "SOZ")
                fp = sum(1 for r in fr.records if r.truth != "SOZ" and r.fused == "SOZ")
                fn = sum(1 for r in fr.records if r.truth == "SOZ" and r.fused != "SOZ")
                assert (p.tp, p.fp, p.fn) == (tp, fp, fn)
                assert p.mm_soz == tp + fp


class TestEffort:
    def test_paper_scale_ratio(self):
        rows = [("SOZ", "SOZ")] * 18 + [("RSN", "RSN")] * 102  # 120 ICs, MM 18
        ratios, mean, sd = evaluate.effort_reduction([make_fold("P0", rows)] * 2)
        assert ratios[0] == pytest.approx(120 / 18, abs=1e-9)
        assert mean == pytest.approx(6.6667, abs=1e-3)

    def test_no_reduction(self):
        rows = [("SOZ", "SOZ")] * 4
        ratios, _, _ = evaluate.effort_reduction([make_fold("P0", rows)])
        assert ratios[0] == 1.0

    def test_zero_mm_soz_full_ratio(self):
        rows = [("RSN", "RSN")] * 30
        ratios, _, _ = evaluate.effort_reduction([make_fold("P0", rows)])
        assert ratios[0] == 30.0

    def test_three_patient_hand_oracle(self):
        folds = [
            make_fold("P0", [("SOZ", "SOZ")] * 2 + [("RSN", "RSN")] * 8),  # 10/2 = 5
            make_fold("P1", [("SOZ", "SOZ")] * 5 + [("RSN", "RSN")] * 5),  # 10/5 = 2
            make_fold("P2", [("RSN", "SOZ")] * 4 + [("RSN", "RSN")] * 4),  # 8/4 = 2
        ]
        ratios, mean, sd = evaluate.effort_reduction(folds)
        assert ratios == [5.0, 2.0, 2.0]
        assert mean == pytest.approx(3.0)
        assert sd == pytest.approx(np.std([5.0, 2.0, 2.0], ddof=1))


class TestRoc:
    def test_identical_runs_identical_points(self, toy_run):
        results, _ = toy_run
        pts = evaluate.roc_assemble([(0.5, results, 1.0), (0.5, results, 1.0)])
        assert pts[0] == pts[1]

    def test_threshold_sweep_sensitivity_monotone(self, toy_run):
        results, _ = toy_run
        sweeps = []
        for thr in (0.3, 0.6, 0.9):
            refused = pipeline.refuse_with_threshold(
                results, pipeline.FusionParams(posterior_threshold=thr)
            )
            sweeps.append((thr, refused, 1.0))
        pts = evaluate.roc_assemble(sweeps)
        by_thr = {p.sweep_value: p for p in pts}
        sens = [by_thr[t].sensitivity for t in (0.3, 0.6, 0.9)]
        assert sens[0] >= sens[1] >= sens[2]
        fprs = [p.false_positive_rate for p in pts]
        assert fprs == sorted(fprs)

    def test_needs_two_points(self, toy_run):
        results, _ = toy_run
        with pytest.raises(ValueError):
            evaluate.roc_assemble([(0.5, results, 1.0)])


class TestTTest:
    def test_identical_samples_p_half(self):
        out = evaluate.one_sided_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert out.t == 0.0 and out.p == 0.5

    def test_large_shift_significant(self):
        rng = np.random.default_rng(4)
        b = rng.normal(size=30).tolist()
        a = [x + 100.0 for x in b]
        assert evaluate.one_sided_t_test(a, b).p < 0.001

    def test_hand_computed_welch_fixture(self):
        out = evaluate.one_sided_t_test([1.1, 2.3, 2.9, 3.4], [0.8, 1.1, 1.9])
        assert out.t == pytest.approx(1.9484917657336538, abs=1e-6)
        assert out.df == pytest.approx(4.8186885230650445, abs=1e-6)
        assert out.p == pytest.approx(0.055521145617786455, abs=1e-6)

    def test_matches_scipy_reference(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.normal(size=rng.integers(3, 12)).tolist()
            b = rng.normal(0.3, 1.5, size=rng.integers(3, 12)).tolist()
            mine = evaluate.one_sided_t_test(a, b)
            ref = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
            assert mine.t == pytest.approx(float(ref.statistic), abs=1e-10)
            assert mine.p == pytest.approx(float(ref.pvalue), abs=1e-10)

    def test_degenerate_zero_variance(self):
        out = evaluate.one_sided_t_test([2.0, 2.0, 2.0], [1.0, 1.0, 1.0])
        assert out.p == 0.0 and out.degenerate
        out = evaluate.one_sided_t_test([1.0, 1.0], [2.0, 2.0])
        assert out.p == 1.0 and out.degenerate

    def test_short_samples_rejected(self):
        with pytest.raises(ValueError):
            evaluate.one_sided_t_test([1.0], [1.0, 2.0])


class TestReport:
    def test_report_files_and_determinism(self, toy_run, tmp_path):
        results, _ = toy_run
        bundle = ReportBundle(
            methods={"deepxsoz": results},
            ablations={"full": results},
            roc=evaluate.roc_assemble([(0.5, results, 1.0), (0.9, results, 1.0)]),
            config={"seed": 99},
        )
        report1 = evaluate.emit_report(bundle, tmp_path / "a")
        evaluate.emit_report(bundle, tmp_path / "b")
        for name in ("report.json", "plm.csv", "ilm.csv", "roc.csv", "ablation.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert len(report1["plm"]) == 1
        parsed = json.loads((tmp_path / "a" / "report.json").read_text())
        assert parsed["schema_version"] == evaluate.REPORT_SCHEMA_VERSION

    def test_one_plm_row_per_method(self, toy_run, toy_prepared, toy_settings, tmp_path):
        results, _ = toy_run
        baselines = pipeline.run_baselines(toy_prepared, toy_settings)
        bundle = ReportBundle(methods={"deepxsoz": results, **baselines})
        report = evaluate.emit_report(bundle, tmp_path)
        assert [row["method"] for row in report["plm"]] == sorted(["deepxsoz", "cnn3", "ls_svm"])
        assert len(report["comparisons"]) == 2
