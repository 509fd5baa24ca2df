"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure.  Logs go to stderr; every artifact lands under --out, including a
run_manifest.json that makes the invocation reproducible.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import evaluate, network, pipeline, spatial, temporal
from .cohort import GeneratorParams, generate_to_dir, read_manifest
from .errors import CohortFormatError, ConfigError

PROFILES = {"desk": network.DESK_PROFILE, "paper": network.PAPER_PROFILE}

CONFIG_KEYS = {
    "seed",
    "profile",
    "mask",
    "n_jobs",
    "svm_c",
    "smote_k",
    "fusion",
    "spatial",
    "temporal",
    "network",
}
FUSION_KEYS = {"posterior_threshold"}
SPATIAL_KEYS = {"activation_threshold", "eps", "vmin", "large_cluster_px", "sobel_edge_threshold"}
TEMPORAL_KEYS = {"window_len", "n_levels", "band", "dominance_cutoff", "tr_seconds", "gini_per_level"}
NETWORK_KEYS = {
    "input_dims",
    "conv_filters",
    "kernel",
    "dense_units",
    "dropout_rate",
    "learning_rate",
    "validation_split",
    "early_stop_patience",
    "max_epochs",
    "batch_size",
    "dtype",
}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def load_run_config(args) -> dict:
    """Config file values with CLI flags taking precedence."""
    config: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}") from exc
        if not isinstance(config, dict):
            raise ConfigError(f"config root must be an object: {path}")
        _check_keys(config, CONFIG_KEYS, "config")
        _check_keys(config.get("fusion", {}), FUSION_KEYS, "fusion")
        _check_keys(config.get("spatial", {}), SPATIAL_KEYS, "spatial")
        _check_keys(config.get("temporal", {}), TEMPORAL_KEYS, "temporal")
        _check_keys(config.get("network", {}), NETWORK_KEYS, "network")
    for key in ("seed", "profile", "mask", "n_jobs"):
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    if getattr(args, "threshold", None) is not None:
        config.setdefault("fusion", {})["posterior_threshold"] = args.threshold
    return config


def build_settings(config: dict) -> pipeline.RunSettings:
    profile = config.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown network profile {profile!r} (desk|paper)")
    net = PROFILES[profile]
    net_over = dict(config.get("network", {}))
    for key in ("input_dims", "conv_filters"):
        if key in net_over:
            net_over[key] = tuple(net_over[key])
    if net_over:
        net = dataclasses.replace(net, **net_over)
    mask_name = config.get("mask", "full")
    if mask_name not in pipeline.NAMED_MASKS:
        raise ConfigError(
            f"unknown ablation mask {mask_name!r}; choices: {sorted(pipeline.NAMED_MASKS)}"
        )
    try:
        fusion = pipeline.FusionParams(**config.get("fusion", {}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return pipeline.RunSettings(
        network=net,
        fusion=fusion,
        mask=pipeline.NAMED_MASKS[mask_name],
        svm_c=float(config.get("svm_c", 1.0)),
        smote_k=int(config.get("smote_k", 5)),
        seed=int(config.get("seed", 0)),
        n_jobs=int(config.get("n_jobs", 1)),
    )


def _feature_params(config: dict, cohort_dir: Path):
    sp = tp = None
    if config.get("spatial"):
        over = dict(config["spatial"])
        if "large_cluster_px" in over:
            try:
                sp = spatial.SpatialParams(**over)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            dims = read_manifest(cohort_dir)["params"]["slice_dims"]
            sp = spatial.params_for_dims(dims[1], dims[2], **over)
    if config.get("temporal"):
        over = dict(config["temporal"])
        if "band" in over:
            over["band"] = tuple(over["band"])
        try:
            tp = temporal.TemporalParams(**over)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return sp, tp


def _write_manifest(out: Path, command: str, config: dict, extra: dict | None = None) -> None:
    manifest = {"command": command, "config": config}
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _prepare(args, config, settings) -> pipeline.PreparedCohort:
    cohort_dir = Path(args.cohort)
    if not (cohort_dir / "manifest.json").exists():
        raise CohortFormatError(f"no cohort at {cohort_dir}")
    sp, tp = _feature_params(config, cohort_dir)
    _log(f"preparing cohort from {cohort_dir} ...")
    return pipeline.prepare_cohort(cohort_dir, settings.network, sp=sp, tp=tp)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    mix = tuple(float(x) for x in args.mix.split(","))
    dims = tuple(int(x) for x in args.slices.split("x"))
    if len(dims) != 3:
        raise ConfigError(f"--slices must be NxHxW, got {args.slices!r}")
    params = GeneratorParams(
        n_patients=args.patients,
        ics_per_patient=args.ics,
        class_mix=mix,  # type: ignore[arg-type]
        slice_dims=dims,  # type: ignore[arg-type]
        tr_seconds=args.tr,
        bold_len=args.bold_len,
        seed=args.seed if args.seed is not None else 0,
    )
    params.validate()
    _log(f"generating {params.n_patients} patients x {params.ics_per_patient} ICs ...")
    generate_to_dir(params, args.out)
    _log(f"cohort written to {args.out}")
    return 0


def cmd_run(args) -> int:
    config = load_run_config(args)
    settings = build_settings(config)
    out = Path(args.out)
    prepared = _prepare(args, config, settings)
    _log(f"running LOPO CV over {len(prepared.patients)} patients ...")
    results, _ = pipeline.run_lopo_cv(prepared, settings, out_dir=out / "folds")
    bundle = evaluate.ReportBundle(methods={"deepxsoz": results}, config=config)
    evaluate.emit_report(bundle, out)
    _write_manifest(out, "run", config)
    failed = [fr.patient_id for fr in results if fr.status != "ok"]
    if failed:
        _log(f"failed folds: {failed}")
    _log(f"report written to {out / 'report.json'}")
    return 0


def cmd_ablate(args) -> int:
    config = load_run_config(args)
    settings = build_settings(config)
    mask_names = [m.strip() for m in args.masks.split(",") if m.strip()]
    for name in mask_names:
        if name not in pipeline.NAMED_MASKS:
            raise ConfigError(f"unknown mask {name!r}; choices: {sorted(pipeline.NAMED_MASKS)}")
    if "full" not in mask_names:
        mask_names.insert(0, "full")
    out = Path(args.out)
    prepared = _prepare(args, config, settings)

    ablations: dict[str, list[pipeline.FoldResult]] = {}
    step1_cache: dict | None = None
    for name in mask_names:
        _log(f"ablation mask {name} ...")
        mask_settings = dataclasses.replace(settings, mask=pipeline.NAMED_MASKS[name])
        results, step1 = pipeline.run_lopo_cv(prepared, mask_settings, step1_cache=step1_cache)
        if step1_cache is None:
            step1_cache = step1  # the noise filter does not depend on the mask
        ablations[name] = results
        pipeline.save_fold_results(results, out / "folds" / name)
    bundle = evaluate.ReportBundle(
        methods={"deepxsoz": ablations["full"]}, ablations=ablations, config=config
    )
    evaluate.emit_report(bundle, out)
    _write_manifest(out, "ablate", config, {"masks": mask_names})
    _log(f"ablation table written to {out / 'ablation.csv'}")
    return 0


def cmd_sweep(args) -> int:
    config = load_run_config(args)
    settings = build_settings(config)
    out = Path(args.out)
    fractions = [float(x) for x in args.fractions.split(",")] if args.fractions else []
    thresholds = [float(x) for x in args.thresholds.split(",")] if args.thresholds else []
    if not fractions and not thresholds:
        raise ConfigError("sweep needs --fractions and/or --thresholds")
    prepared = _prepare(args, config, settings)

    points = []
    base_results = None
    if fractions:
        _log(f"training-size sweep over fractions {fractions} ...")
        by_fraction = pipeline.sweep_training_size(prepared, fractions, settings)
        for fraction in fractions:
            results = by_fraction[fraction]
            if fraction == 1.0:
                base_results = results
            points.append((fraction, results, fraction))
    if thresholds:
        if base_results is None:
            base_results, _ = pipeline.run_lopo_cv(prepared, settings)
        _log(f"posterior-threshold sweep over {thresholds} ...")
        for thr in thresholds:
            refused = pipeline.refuse_with_threshold(
                base_results, pipeline.FusionParams(posterior_threshold=thr)
            )
            points.append((thr, refused, 1.0))
    roc = evaluate.roc_assemble(points)
    bundle = evaluate.ReportBundle(
        methods={"deepxsoz": points[0][1]}, roc=roc, config=config
    )
    evaluate.emit_report(bundle, out)
    _write_manifest(out, "sweep", config, {"fractions": fractions, "thresholds": thresholds})
    _log(f"ROC written to {out / 'roc.csv'}")
    return 0


def cmd_baselines(args) -> int:
    config = load_run_config(args)
    settings = build_settings(config)
    out = Path(args.out)
    prepared = _prepare(args, config, settings)
    _log("running the full pipeline ...")
    main_results, _ = pipeline.run_lopo_cv(prepared, settings, out_dir=out / "folds" / "deepxsoz")
    _log("running baselines (3-class CNN, LS-SVM) ...")
    baselines = pipeline.run_baselines(prepared, settings)
    for name, results in baselines.items():
        pipeline.save_fold_results(results, out / "folds" / name)
    bundle = evaluate.ReportBundle(
        methods={"deepxsoz": main_results, **baselines}, config=config
    )
    evaluate.emit_report(bundle, out)
    _write_manifest(out, "baselines", config)
    _log(f"comparison written to {out / 'report.json'}")
    return 0


def cmd_train_step1(args) -> int:
    config = load_run_config(args)
    settings = build_settings(config)
    prepared = _prepare(args, config, settings)
    from .cohort import ICLabel

    noise01 = (prepared.truth != int(ICLabel.NOISE)).astype(int)
    _log(f"training the noise filter on {len(noise01)} ICs ...")
    weights = network.train(settings.network, prepared.montages, noise01)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    network.save_model(weights, out / "step1.icnn")
    _write_manifest(out, "train-step1", config)
    _log(f"model written to {out / 'step1.icnn'}")
    return 0


def cmd_train_step2(args) -> int:
    from . import classify

    config = load_run_config(args)
    settings = build_settings(config)
    prepared = _prepare(args, config, settings)
    _log("training the step-2 SVM on the whole cohort ...")
    model = pipeline.train_step2(prepared, settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = tuple(
        name
        for name, keep in zip(classify.FEATURE_NAMES, settings.mask.column_flags())
        if keep
    )
    classify.save_svm_model(model, out / "step2.svm.json", feature_names=names)
    _write_manifest(out, "train-step2", config)
    _log(f"model written to {out / 'step2.svm.json'}")
    return 0


def cmd_features(args) -> int:
    from .cohort import iter_patients

    config = load_run_config(args)
    cohort_dir = Path(args.cohort)
    if not (cohort_dir / "manifest.json").exists():
        raise CohortFormatError(f"no cohort at {cohort_dir}")
    sp, tp = _feature_params(config, cohort_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spatial_rows = ["ic_id,n_clusters,wm_overlap"]
    temporal_rows = ["ic_id,activelet_gini,sine_gini,hf_dominant"]
    for patient in iter_patients(cohort_dir):
        for ic in patient.ics:
            if sp is None:
                sp = spatial.params_for_dims(ic.slices.shape[1], ic.slices.shape[2])
            if tp is None:
                tp = temporal.TemporalParams(tr_seconds=ic.tr_seconds)
            n_clusters, wm = spatial.spatial_features(ic, sp)
            ag, sg, hf = temporal.temporal_features(ic, tp)
            spatial_rows.append(f"{ic.ic_id},{n_clusters},{wm}")
            temporal_rows.append(f"{ic.ic_id},{ag!r},{sg!r},{int(hf)}")
    (out / "features_spatial.csv").write_text("\n".join(spatial_rows) + "\n")
    (out / "features_temporal.csv").write_text("\n".join(temporal_rows) + "\n")
    _write_manifest(out, "features", config)
    _log(f"feature dumps written to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(
        cohort_dir=args.cohort,
        results_dir=args.results,
        session_dir=args.session_dir,
        ui_dir=args.ui_dir,
        show_all=args.show_all,
    )
    host, _, port = args.bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cohort", required=True, help="cohort directory (from `icsort gen`)")
    p.add_argument("--out", required=True, help="output directory for artifacts")
    p.add_argument("--config", help="JSON config file; CLI flags override its values")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--profile", choices=sorted(PROFILES), help="network profile")
    p.add_argument("--mask", help="ablation mask name")
    p.add_argument("--threshold", type=float, help="fusion posterior threshold")
    p.add_argument("--n-jobs", type=int, dest="n_jobs", help="parallel fold workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icsort",
        description="Sort rs-fMRI independent components into Noise / RSN / SOZ.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patients", type=int, default=52)
    p.add_argument("--ics", type=int, default=100)
    p.add_argument("--mix", default="0.55,0.40,0.05", help="noise,rsn,soz fractions")
    p.add_argument("--slices", default="12x64x64", help="n_slices x height x width")
    p.add_argument("--tr", type=float, default=2.0)
    p.add_argument("--bold-len", type=int, default=300, dest="bold_len")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="LOPO cross-validation + report")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="knowledge-ablation comparison")
    _add_run_flags(p)
    p.add_argument("--masks", required=True, help="comma-separated mask names")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="training-size / threshold sweep -> ROC")
    _add_run_flags(p)
    p.add_argument("--fractions", help="comma-separated training fractions, e.g. 0.2,0.5,0.8")
    p.add_argument("--thresholds", help="comma-separated posterior thresholds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baselines", help="3-class CNN + LS-SVM comparison")
    _add_run_flags(p)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("train-step1", help="train and persist the noise filter")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train_step1)

    p = sub.add_parser("train-step2", help="train and persist the step-2 SVM")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train_step2)

    p = sub.add_parser("features", help="dump per-IC spatial/temporal feature CSVs")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config file (spatial/temporal params)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("serve", help="review service over a completed run")
    p.add_argument("--cohort", required=True)
    p.add_argument("--results", required=True, help="fold results directory")
    p.add_argument("--session-dir", required=True, help="where reviewer labels persist")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--ui-dir", help="static frontend to serve at /")
    p.add_argument(
        "--show-all",
        action="store_true",
        help="allow labeling ICs that are not machine-marked SOZ candidates",
    )
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except (CohortFormatError, FileNotFoundError) as exc:
        _log(f"data error: {exc}")
        return 3
    except KeyboardInterrupt:
        _log("interrupted")
        return 4
    except Exception as exc:  # pragma: no cover - defensive
        _log(f"runtime failure: {type(exc).__name__}: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
