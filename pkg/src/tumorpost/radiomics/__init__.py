from .features import (
    DIRECTIONS_13,
    FeatureVector,
    extract_features,
    first_order_features,
    glcm_features,
    gradient_features,
    load_feature_csv,
    moment_invariants,
    rlm_features,
    save_feature_csv,
    shape_features,
    wavelet_subbands,
)
from .manifest import FeatureManifest, default_manifest
from .regions import (
    CandidateRegion,
    SamplerConfig,
    boundary_band,
    extract_positive_regions,
    regions_from_mask,
    sample_negative_regions,
    sampler_quotas,
)
from .wavelet import BAND_NAMES, haar3d, ihaar3d

__all__ = [
    "DIRECTIONS_13", "FeatureVector", "extract_features",
    "first_order_features", "glcm_features", "gradient_features",
    "load_feature_csv", "moment_invariants", "rlm_features",
    "save_feature_csv", "shape_features", "wavelet_subbands",
    "FeatureManifest", "default_manifest",
    "CandidateRegion", "SamplerConfig", "boundary_band",
    "extract_positive_regions", "regions_from_mask",
    "sample_negative_regions", "sampler_quotas",
    "BAND_NAMES", "haar3d", "ihaar3d",
]
