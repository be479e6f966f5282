"""Command-line entry points.

Subcommands cover the individual stages plus a full pipeline run driven by
a JSON config.  Exit codes: 0 success, 2 configuration/usage error, 3 stage
failure.  Log records are line-delimited JSON on stderr.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import ensemble, featsel, phantom, rng as rngmod
from .evalmetrics import MetricsReport, compute_metrics
from .neural import Cnn3dConfig, Cnn3dModel, TrainSchedule, save_history_csv
from .pipeline import (
    Case, PipelineConfig, PipelineModels, StageError, StageToggles,
    run_pipeline, train_band_cnn, train_radiomics_filter,
)
from .postproc import binarize, morph_smooth, temporal_refine
from .radiomics.features import extract_features, save_feature_csv, load_feature_csv
from .radiomics.manifest import default_manifest
from .radiomics.regions import CandidateRegion, SamplerConfig, extract_positive_regions, sample_negative_regions
from .volumes import clip_rescale_hu, load_volume, resample_isotropic, save_volume

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _log(event, **fields):
    rec = {"ts": round(time.time(), 3), "event": event}
    rec.update(fields)
    print(json.dumps(rec), file=sys.stderr)


def _regions_to_json(regions, path):
    payload = [
        {
            "region_id": r.region_id,
            "source": r.source,
            "label": r.label,
            "shape": list(r.shape),
            "coords_zyx": r.coords_zyx.tolist(),
        }
        for r in regions
    ]
    with open(path, "w") as f:
        json.dump(payload, f)


def _regions_from_json(path):
    with open(path) as f:
        payload = json.load(f)
    return [
        CandidateRegion(
            np.asarray(r["coords_zyx"], dtype=np.int64), tuple(r["shape"]),
            source=r["source"], label=r["label"], region_id=r["region_id"],
        )
        for r in payload
    ]


def _cmd_phantom(args):
    os.makedirs(args.out, exist_ok=True)
    cases = []
    for i in range(args.cases):
        spec = phantom.standard_phantom_spec(i, master_seed=args.seed)
        ct, liver, tumor, p_liver, p_tumor = phantom.generate_phantom(spec)
        base = os.path.join(args.out, f"case{i:03d}")
        spec.to_json(base + "_spec.json")
        save_volume(ct, base + "_ct.vol")
        save_volume(liver, base + "_liver.vol")
        save_volume(tumor, base + "_tumor.vol")
        save_volume(p_liver, base + "_pliver.vol")
        save_volume(p_tumor, base + "_ptumor.vol")
        cases.append({
            "case_id": f"case{i:03d}",
            "ct": base + "_ct.vol",
            "liver": base + "_liver.vol",
            "tumor": base + "_tumor.vol",
            "p_liver": base + "_pliver.vol",
            "p_tumor": base + "_ptumor.vol",
        })
        _log("phantom-written", case=cases[-1]["case_id"])
    with open(os.path.join(args.out, "cases.json"), "w") as f:
        json.dump({"version": 1, "cases": cases}, f, indent=1)
    return EXIT_OK


def _cmd_preprocess(args):
    v = load_volume(args.input, as_kind="hu")
    if args.resample:
        v = resample_isotropic(v, args.resample)
    out = clip_rescale_hu(v)
    save_volume(out, args.out)
    _log("preprocess-done", out=args.out)
    return EXIT_OK


def _cmd_postproc(args):
    p = load_volume(args.prob, as_kind="prob")
    mask = binarize(p, mode=args.mode, fixed_tau=args.tau)
    if not args.no_morph:
        mask = morph_smooth(mask)
    if not args.no_temporal:
        mask = temporal_refine(mask, p, suppress_isolated=args.suppress_isolated)
    save_volume(mask, args.out)
    _log("postproc-done", out=args.out, foreground=int(mask.data.sum()))
    return EXIT_OK


def _cmd_sample(args):
    ct = load_volume(args.ct)
    liver = load_volume(args.liver, as_kind="mask")
    tumor = load_volume(args.tumor, as_kind="mask")
    cfg = SamplerConfig(quota_total=args.quota, r_max=args.r_max, seed=args.seed)
    negatives, warn_records = sample_negative_regions(ct, liver, tumor, cfg)
    positives = extract_positive_regions(tumor)
    _regions_to_json(positives + negatives, args.out)
    _log("sample-done", positives=len(positives), negatives=len(negatives),
         unfilled=len(warn_records))
    return EXIT_OK


def _cmd_features(args):
    volume = load_volume(args.ct)
    regions = _regions_from_json(args.regions)
    manifest = default_manifest()
    vectors = [extract_features(r, volume, manifest) for r in regions]
    save_feature_csv(args.out, vectors, manifest)
    if args.manifest_out:
        manifest.save_json(args.manifest_out)
    _log("features-done", rows=len(vectors), out=args.out)
    return EXIT_OK


def _cmd_select(args):
    vectors = load_feature_csv(args.features)
    regions = _regions_from_json(args.regions)
    labels = {r.region_id: 1 if r.label == "positive" else 0 for r in regions}
    X = np.stack([v.values for v in vectors])
    y = np.array([labels[v.region_id] for v in vectors])
    keep_var = featsel.drop_near_zero_variance(X)
    keep_corr = keep_var[featsel.drop_correlated(X[:, keep_var])]
    Z, _, _ = featsel.fit_apply_standardize(X[:, keep_corr])
    rankings = [
        featsel.rank_features(Z, y, s, seed=args.seed) for s in featsel.STRATEGIES
    ]
    subset = featsel.select_stable(rankings, top_k=args.top_k, target=args.target)
    payload = {
        "surviving_columns": keep_corr.tolist(),
        "rankings": featsel.rankings_to_json(rankings),
        "raw_intersection": subset.raw_intersection.tolist(),
        "selected_global": keep_corr[subset.indices].tolist(),
    }
    with open(args.out, "w") as f:
        json.dump(payload, f)
    _log("select-done", selected=len(subset.indices))
    return EXIT_OK


def _cmd_train_rf(args):
    vectors = load_feature_csv(args.features)
    regions = _regions_from_json(args.regions)
    labels = {r.region_id: 1 if r.label == "positive" else 0 for r in regions}
    with open(args.selected) as f:
        sel = json.load(f)["selected_global"]
    X = np.stack([v.values for v in vectors])[:, sel]
    y = np.array([labels[v.region_id] for v in vectors])
    Z, _, params = featsel.fit_apply_standardize(X)
    model = ensemble.train_forest(Z, y, seed=args.seed)
    ensemble.save_forest_json(model, args.out)
    with open(args.out + ".standardizer.json", "w") as f:
        json.dump({"mean": params.mean.tolist(), "std": params.std.tolist(),
                   "selected": list(map(int, sel))}, f)
    _log("train-rf-done", trees=len(model.trees))
    return EXIT_OK


def _load_cases(cases_json):
    with open(cases_json) as f:
        listing = json.load(f)["cases"]
    cases = []
    for entry in listing:
        cases.append(Case(
            case_id=entry["case_id"],
            ct=load_volume(entry["ct"]),
            p_tumor=load_volume(entry["p_tumor"], as_kind="prob"),
            tumor_gt=load_volume(entry["tumor"], as_kind="mask")
            if "tumor" in entry else None,
            liver_gt=load_volume(entry["liver"], as_kind="mask")
            if "liver" in entry else None,
        ))
    return cases


def _cmd_train_cnn(args):
    cases = _load_cases(args.cases)
    config = PipelineConfig(master_seed=args.seed, d_max=args.d_max)
    config.cnn = Cnn3dConfig(
        patch_size=args.patch_size,
        conv_channels=tuple(args.channels),
        fc_width=args.fc_width,
    )
    config.schedule = TrainSchedule(max_epochs=args.max_epochs)
    model, history = train_band_cnn(cases, config)
    model.save(args.out)
    if args.history_out:
        save_history_csv(history, args.history_out)
    _log("train-cnn-done", epochs=len(history),
         best_val=min(h.val_loss for h in history))
    return EXIT_OK


def _cmd_refine(args):
    mask = load_volume(args.mask, as_kind="mask")
    ct8 = load_volume(args.ct)
    model = Cnn3dModel.load(args.model)
    from .neural import refine_labels
    out = refine_labels(mask, ct8, model, d_max=args.d_max)
    save_volume(out, args.out)
    _log("refine-done", out=args.out, foreground=int(out.data.sum()))
    return EXIT_OK


def _cmd_eval(args):
    pred = load_volume(args.pred, as_kind="mask")
    true = load_volume(args.true, as_kind="mask")
    row = compute_metrics(pred, true, case_id=args.case_id)
    report = MetricsReport([row])
    if args.out_json:
        report.save_json(args.out_json)
    if args.out_csv:
        report.save_csv(args.out_csv)
    print(json.dumps({
        "sensitivity": row.sensitivity, "ppv": row.ppv, "dice": row.dice,
    }))
    return EXIT_OK


def _pipeline_config_from_json(payload):
    toggles = StageToggles(**payload.get("toggles", {}))
    config = PipelineConfig(toggles=toggles)
    for key in ("binarize_mode", "fixed_tau", "restore_thresh",
                "suppress_isolated", "tau_rf", "d_max", "master_seed", "workers"):
        if key in payload:
            setattr(config, key, payload[key])
    if "cnn" in payload:
        cnn = payload["cnn"]
        config.cnn = Cnn3dConfig(
            patch_size=cnn.get("patch_size", 11),
            conv_channels=tuple(cnn.get("conv_channels", (64, 64, 128, 128, 256))),
            fc_width=cnn.get("fc_width", 64),
        )
    if "schedule" in payload:
        config.schedule = TrainSchedule(**payload["schedule"])
    return config


def _cmd_pipeline(args):
    with open(args.config) as f:
        payload = json.load(f)
    config = _pipeline_config_from_json(payload)
    if args.workers is not None:
        config.workers = args.workers
    test_cases = _load_cases(payload["test_cases"])
    models = PipelineModels()
    needs_training = config.toggles.radiomics_filter or config.toggles.cnn_refine
    if needs_training:
        train_cases = _load_cases(payload["train_cases"])
        if config.toggles.radiomics_filter:
            _log("train-radiomics-start", cases=len(train_cases))
            trained = train_radiomics_filter(train_cases, config)
            models.selected_indices = trained.selected_indices
            models.standardizer = trained.standardizer
            models.forest = trained.forest
        if config.toggles.cnn_refine:
            _log("train-cnn-start", cases=len(train_cases))
            models.cnn, _ = train_band_cnn(train_cases, config)
    result = run_pipeline(test_cases, config, models)
    os.makedirs(args.out, exist_ok=True)
    for res in result.results:
        save_volume(res.mask, os.path.join(args.out, f"{res.case_id}_refined.vol"))
    result.report.save_csv(os.path.join(args.out, "metrics.csv"))
    result.report.save_json(os.path.join(args.out, "metrics.json"))
    with open(os.path.join(args.out, "run_manifest.json"), "w") as f:
        json.dump(result.manifest, f, indent=1)
    summary = result.report.summary()
    _log("pipeline-done", dice_mean=summary["dice"][0])
    print(json.dumps({"dice_mean": summary["dice"][0]}))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tumorpost",
        description="Volumetric tumor segmentation post-processing toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic phantom suite")
    p.add_argument("--out", required=True)
    p.add_argument("--cases", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("preprocess", help="HU clip/rescale (optionally resample)")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resample", type=float, default=None)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("postproc", help="binarize + morphological/temporal cleanup")
    p.add_argument("--prob", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["otsu", "fixed"], default="otsu")
    p.add_argument("--tau", type=int, default=127)
    p.add_argument("--no-morph", action="store_true")
    p.add_argument("--no-temporal", action="store_true")
    p.add_argument("--suppress-isolated", action="store_true")
    p.set_defaults(func=_cmd_postproc)

    p = sub.add_parser("sample", help="sample negative candidate regions")
    p.add_argument("--ct", required=True)
    p.add_argument("--liver", required=True)
    p.add_argument("--tumor", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--quota", type=int, default=1000)
    p.add_argument("--r-max", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("features", help="extract 728-entry feature vectors")
    p.add_argument("--ct", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest-out", default=None)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("select", help="rank features and pick the stable subset")
    p.add_argument("--features", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=30)
    p.add_argument("--target", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("train-rf", help="train the false-positive forest")
    p.add_argument("--features", required=True)
    p.add_argument("--regions", required=True)
    p.add_argument("--selected", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_rf)

    p = sub.add_parser("train-cnn", help="train the boundary-band classifier")
    p.add_argument("--cases", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=11)
    p.add_argument("--channels", type=int, nargs=5, default=[64, 64, 128, 128, 256])
    p.add_argument("--fc-width", type=int, default=64)
    p.add_argument("--d-max", type=float, default=6.0)
    p.add_argument("--max-epochs", type=int, default=40)
    p.add_argument("--history-out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train_cnn)

    p = sub.add_parser("refine", help="CNN boundary-band relabelling")
    p.add_argument("--mask", required=True)
    p.add_argument("--ct", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d-max", type=float, default=6.0)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="sensitivity / PPV / Dice against GT")
    p.add_argument("--pred", required=True)
    p.add_argument("--true", required=True)
    p.add_argument("--case-id", default="case")
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("pipeline", help="full run from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except StageError as e:
        _log("stage-error", stage=e.stage, case=e.case_id, error=str(e.cause))
        return EXIT_STAGE
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as e:
        _log("config-error", error=f"{type(e).__name__}: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
