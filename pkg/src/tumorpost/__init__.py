"""tumorpost: volumetric tumor-segmentation post-processing and verification.

Converts soft liver/tumor probability maps into refined binary masks:
adaptive thresholding, morphological and inter-slice cleanup, radiomics
false-positive rejection, 3D-CNN boundary relabelling, plus a synthetic
phantom harness for end-to-end validation.
"""

__version__ = "0.1.0"

from .volumes import (
    HU_FLOAT,
    NORMALIZED_8BIT,
    GridMismatchError,
    Mask3D,
    ProbMap3D,
    SignedDistanceField,
    SliceStack,
    Volume3D,
    VolumeFormatError,
    clip_rescale_hu,
    connected_components,
    extract_slice_stack,
    load_volume,
    resample_isotropic,
    save_volume,
    signed_edt,
)
from .postproc import (
    DegenerateHistogramError,
    Histogram256,
    OtsuResult,
    binarize,
    morph_smooth,
    otsu_threshold,
    temporal_refine,
)
from .evalmetrics import (
    MetricsReport,
    MetricsRow,
    compute_metrics,
    stratify_by_size,
    wilcoxon_signed_rank,
)
from .phantom import PhantomSpec, generate_phantom, perturb, standard_phantom_spec
from .pipeline import (
    Case,
    PipelineConfig,
    PipelineModels,
    StageToggles,
    run_pipeline,
    train_band_cnn,
    train_radiomics_filter,
)
