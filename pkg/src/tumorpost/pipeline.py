"""Batch orchestration: stage wiring, toggles, training helpers, manifests.

Stage order is binarize -> morphological smoothing -> temporal consistency ->
candidate extraction -> radiomics false-positive filter -> CNN boundary
refinement -> metrics; every stage after binarize can be toggled off.  All
randomness flows from one master seed through named streams, and per-case
work is pure, so results are identical for any worker count.
"""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ensemble, featsel, rng as rngmod
from .evalmetrics import MetricsReport, compute_metrics
from .neural import Cnn3dConfig, TrainSchedule, extract_patches, make_band_dataset, refine_labels, train_patch_cnn
from .postproc import binarize, morph_smooth, temporal_refine
from .radiomics.features import extract_features
from .radiomics.manifest import default_manifest
from .radiomics.regions import CandidateRegion, SamplerConfig, regions_from_mask, sample_negative_regions
from .volumes import Mask3D, ProbMap3D, Volume3D, clip_rescale_hu


class StageError(RuntimeError):
    def __init__(self, stage, case_id, cause):
        super().__init__(f"stage {stage!r} failed on case {case_id!r}: {cause}")
        self.stage = stage
        self.case_id = case_id
        self.cause = cause


@dataclass
class StageToggles:
    morph: bool = True
    temporal: bool = True
    radiomics_filter: bool = True
    cnn_refine: bool = True


@dataclass
class PipelineConfig:
    toggles: StageToggles = field(default_factory=StageToggles)
    binarize_mode: str = "otsu"          # "otsu" or "fixed"
    fixed_tau: int = 127
    restore_thresh: float = 0.6
    suppress_isolated: bool = False
    tau_rf: float = 0.5
    d_max: float = 6.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    forest: ensemble.ForestParams = field(default_factory=ensemble.ForestParams)
    cnn: Cnn3dConfig = field(default_factory=Cnn3dConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    master_seed: int = 0
    workers: int = 1

    def config_hash(self):
        payload = json.dumps(_to_jsonable(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _to_jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: _to_jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class Case:
    case_id: str
    ct: Volume3D                      # HU-float or normalized-8bit
    p_tumor: ProbMap3D
    tumor_gt: Mask3D = None
    liver_gt: Mask3D = None

    def ct_8bit(self):
        if self.ct.value_kind == "normalized-8bit":
            return self.ct
        return clip_rescale_hu(self.ct)


@dataclass
class PipelineModels:
    """Trained artifacts for the optional stages."""

    selected_indices: np.ndarray = None
    standardizer: featsel.StandardizationParams = None
    forest: ensemble.ForestModel = None
    cnn: object = None


@dataclass
class CaseResult:
    case_id: str
    mask: Mask3D
    stage_stats: list                 # (stage, voxel_count, sha1_of_mask)
    stage_timings: dict
    region_probs: list = field(default_factory=list)


def _mask_sha(mask: Mask3D) -> str:
    return hashlib.sha1(mask.data.tobytes()).hexdigest()[:12]


def radiomics_filter_mask(mask, ct8, models, tau_rf):
    """Region-wise suppression: rebuild the mask from kept components."""
    regions = regions_from_mask(mask, source="lesion-component")
    if not regions:
        return mask, []
    manifest = default_manifest()
    rows = np.stack([
        extract_features(r, ct8, manifest).values[models.selected_indices]
        for r in regions
    ])
    rows = models.standardizer.apply(rows)
    kept, q = ensemble.suppress_false_positives(regions, rows, models.forest, tau_rf)
    out = np.zeros_like(mask.data)
    for r in kept:
        out[tuple(r.coords_zyx.T)] = 1
    return Mask3D(out, mask.spacing), list(zip([r.region_id for r in regions], q.tolist()))


def process_case(case: Case, config: PipelineConfig, models: PipelineModels = None) -> CaseResult:
    stats = []
    timings = {}
    region_probs = []

    def record(stage, mask):
        stats.append((stage, int(mask.data.sum()), _mask_sha(mask)))

    def run_stage(stage, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as e:  # noqa: BLE001 - re-tagged with stage context
            raise StageError(stage, case.case_id, e) from e
        timings[stage] = time.perf_counter() - t0
        return out

    mask = run_stage(
        "binarize",
        lambda: binarize(case.p_tumor, mode=config.binarize_mode,
                         fixed_tau=config.fixed_tau),
    )
    record("binarize", mask)
    if config.toggles.morph:
        mask = run_stage("morph", lambda: morph_smooth(mask))
        record("morph", mask)
    if config.toggles.temporal:
        mask = run_stage(
            "temporal",
            lambda: temporal_refine(mask, case.p_tumor,
                                    restore_thresh=config.restore_thresh,
                                    suppress_isolated=config.suppress_isolated),
        )
        record("temporal", mask)
    if config.toggles.radiomics_filter:
        if models is None or models.forest is None:
            raise StageError("radiomics-filter", case.case_id,
                             "no trained forest supplied")
        ct8 = case.ct_8bit()
        mask, region_probs = run_stage(
            "radiomics-filter",
            lambda: radiomics_filter_mask(mask, ct8, models, config.tau_rf),
        )
        record("radiomics-filter", mask)
    if config.toggles.cnn_refine:
        if models is None or models.cnn is None:
            raise StageError("cnn-refine", case.case_id, "no trained CNN supplied")
        ct8 = case.ct_8bit()
        mask = run_stage(
            "cnn-refine",
            lambda: refine_labels(mask, ct8, models.cnn, d_max=config.d_max),
        )
        record("cnn-refine", mask)
    return CaseResult(case.case_id, mask, stats, timings, region_probs)


@dataclass
class PipelineResult:
    results: list
    report: MetricsReport
    manifest: dict


def run_pipeline(cases, config: PipelineConfig, models: PipelineModels = None) -> PipelineResult:
    """Process cases (optionally in a thread pool) and score against GT."""
    t0 = time.perf_counter()
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(
                lambda c: process_case(c, config, models), cases
            ))
    else:
        results = [process_case(c, config, models) for c in cases]
    rows = []
    for case, res in zip(cases, results):
        if case.tumor_gt is not None:
            rows.append(compute_metrics(res.mask, case.tumor_gt, case.case_id))
    report = MetricsReport(rows)
    manifest = {
        "config_hash": config.config_hash(),
        "master_seed": config.master_seed,
        "n_cases": len(cases),
        "wall_time_s": time.perf_counter() - t0,
        "stages": {
            res.case_id: {
                "stats": res.stage_stats,
                "timings": res.stage_timings,
            }
            for res in results
        },
    }
    return PipelineResult(results, report, manifest)


# ---------------------------------------------------------------------------
# training helpers for the two learned stages
# ---------------------------------------------------------------------------


def _pre_filter_mask(case, config):
    mask = binarize(case.p_tumor, mode=config.binarize_mode, fixed_tau=config.fixed_tau)
    if config.toggles.morph:
        mask = morph_smooth(mask)
    if config.toggles.temporal:
        mask = temporal_refine(mask, case.p_tumor,
                               restore_thresh=config.restore_thresh,
                               suppress_isolated=config.suppress_isolated)
    return mask


def collect_training_candidates(cases, config, n_sampled_negatives=40):
    """Label intermediate-mask components by GT overlap (>= 0.5 positive,
    <= 0.1 negative) and top up with sampled spherical negatives."""
    labelled = []
    for case in cases:
        if case.tumor_gt is None:
            raise ValueError("training cases need tumor ground truth")
        mask = _pre_filter_mask(case, config)
        gt = case.tumor_gt.data.astype(bool)
        for region in regions_from_mask(mask, prefix=f"{case.case_id}"):
            overlap = float(gt[tuple(region.coords_zyx.T)].mean())
            if overlap >= 0.5:
                labelled.append((case, region, 1))
            elif overlap <= 0.1:
                labelled.append((case, region, 0))
        if case.liver_gt is not None and n_sampled_negatives > 0:
            cfg = SamplerConfig(
                r_min=config.sampler.r_min, r_step=config.sampler.r_step,
                r_max=min(config.sampler.r_max, 12),
                quota_total=n_sampled_negatives,
                seed=rngmod.stream(config.master_seed, "train-neg", case.case_id).integers(2 ** 31),
            )
            negs, _ = sample_negative_regions(case.ct, case.liver_gt,
                                              case.tumor_gt, cfg)
            labelled.extend((case, r, 0) for r in negs)
    return labelled


def train_radiomics_filter(cases, config, n_sampled_negatives=40) -> PipelineModels:
    """Feature extraction + selection + forest training on labelled candidates."""
    labelled = collect_training_candidates(cases, config, n_sampled_negatives)
    manifest = default_manifest()
    X = np.stack([
        extract_features(region, case.ct_8bit(), manifest).values
        for case, region, _ in labelled
    ])
    y = np.array([lab for _, _, lab in labelled], dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("training candidates must include both classes")
    keep_var = featsel.drop_near_zero_variance(X)
    keep_corr = keep_var[featsel.drop_correlated(X[:, keep_var])]
    Z, _, params_all = featsel.fit_apply_standardize(X[:, keep_corr])
    rankings = [
        featsel.rank_features(Z, y, strategy,
                              seed=rngmod.stream(config.master_seed, "rank", strategy).integers(2 ** 31))
        for strategy in featsel.STRATEGIES
    ]
    subset = featsel.select_stable(rankings)
    selected = keep_corr[subset.indices]
    Xsel = X[:, selected]
    Xsel_std, _, standardizer = featsel.fit_apply_standardize(Xsel)
    forest = ensemble.train_forest(
        Xsel_std, y, config.forest,
        seed=rngmod.stream(config.master_seed, "forest").integers(2 ** 31),
    )
    models = PipelineModels()
    models.selected_indices = selected
    models.standardizer = standardizer
    models.forest = forest
    return models


def train_band_cnn(cases, config, max_per_case=4000, val_fraction=0.2):
    """Train the boundary-band patch classifier on GT band labels."""
    gen = rngmod.stream(config.master_seed, "cnn-data")
    xs = []
    ys = []
    for case in cases:
        if case.tumor_gt is None or not case.tumor_gt.data.any():
            continue
        coords, labels = make_band_dataset(case.ct_8bit(), case.tumor_gt,
                                           d_max=config.d_max)
        pos = np.flatnonzero(labels == 1)
        neg = np.flatnonzero(labels == 0)
        take = min(max_per_case // 2, pos.size, neg.size)
        pos = pos[gen.permutation(pos.size)[:take]]
        neg = neg[gen.permutation(neg.size)[:take]]
        sel = np.concatenate([pos, neg])
        patches = extract_patches(case.ct_8bit(), coords[sel],
                                  config.cnn.patch_size,
                                  center=config.cnn.center_patches)
        xs.append(patches)
        ys.append(labels[sel])
    if not xs:
        raise ValueError("no band training data available")
    X = np.concatenate(xs)
    y = np.concatenate(ys).astype(np.float64)
    order = gen.permutation(X.shape[0])
    X, y = X[order], y[order]
    n_val = max(1, int(val_fraction * X.shape[0]))
    model, history = train_patch_cnn(
        X[n_val:], y[n_val:], X[:n_val], y[:n_val],
        schedule=config.schedule, config=config.cnn,
        seed=rngmod.stream(config.master_seed, "cnn-train").integers(2 ** 31),
    )
    return model, history
