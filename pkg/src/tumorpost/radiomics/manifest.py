"""Normative ordered listing of the 728 radiomic descriptors.

Layout: 80 core features (34 first-order, 2 gradient, 11 run-length,
22 co-occurrence, 8 shape, 3 moment invariants), the 72 non-shape features
recomputed on a narrow boundary band, and the same 72 on each of the eight
Haar sub-bands (80 + 72 + 8*72 = 728).
"""

import json
from dataclasses import dataclass

from .wavelet import BAND_NAMES

FIRSTORDER_NAMES = (
    "min", "max", "range", "mean", "median", "mode", "std", "variance",
    "mad", "rmad", "skewness", "kurtosis", "energy", "total_energy",
    "entropy", "uniformity", "rms", "cv",
    "p5", "p10", "p25", "p75", "p90", "p95", "iqr", "p90m10", "qcd",
    "bin_entropy", "bin_energy", "bin_max_freq", "bin_nonempty",
    "bin_skewness", "bin_kurtosis", "bin_mean_index",
)
GRADIENT_NAMES = ("grad_mean", "grad_std")
RLM_NAMES = (
    "sre", "lre", "gln", "rln", "rp",
    "lgre", "hgre", "srlge", "srhge", "lrlge", "lrhge",
)
GLCM_NAMES = (
    "contrast", "correlation", "energy", "entropy", "homogeneity",
    "dissimilarity", "autocorrelation", "cluster_shade",
    "cluster_prominence", "cluster_tendency", "max_probability",
    "sum_average", "sum_variance", "sum_entropy", "difference_average",
    "difference_variance", "difference_entropy", "imc1", "imc2",
    "inverse_variance", "joint_average", "joint_variance",
)
SHAPE_NAMES = (
    "volume", "surface_area", "sphericity", "compactness1", "compactness2",
    "elongation", "flatness", "max_diameter_3d",
)
MOMENT_NAMES = ("j1", "j2", "j3")

GROUP_NAMES = {
    "firstorder": FIRSTORDER_NAMES,
    "gradient": GRADIENT_NAMES,
    "rlm": RLM_NAMES,
    "glcm": GLCM_NAMES,
    "shape": SHAPE_NAMES,
    "moments": MOMENT_NAMES,
}

# groups recomputed on the boundary band and on wavelet sub-bands
NONSHAPE_GROUPS = ("firstorder", "gradient", "rlm", "glcm", "moments")
CORE_GROUPS = ("firstorder", "gradient", "rlm", "glcm", "shape", "moments")


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    group: str
    context: str  # "core", "boundary", or "wavelet_<BAND>"


class FeatureManifest:
    """Ordered, unique feature names; order is stable across runs."""

    def __init__(self):
        entries = []
        for group in CORE_GROUPS:
            for feat in GROUP_NAMES[group]:
                entries.append(ManifestEntry(f"core_{group}_{feat}", group, "core"))
        for group in NONSHAPE_GROUPS:
            for feat in GROUP_NAMES[group]:
                entries.append(
                    ManifestEntry(f"boundary_{group}_{feat}", group, "boundary")
                )
        for band in BAND_NAMES:
            ctx = f"wavelet_{band}"
            for group in NONSHAPE_GROUPS:
                for feat in GROUP_NAMES[group]:
                    entries.append(
                        ManifestEntry(f"{ctx}_{group}_{feat}", group, ctx)
                    )
        self.entries = tuple(entries)
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise AssertionError("manifest names must be unique")
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]

    def index_of(self, name: str) -> int:
        return self._index[name]

    def count(self, group=None, context=None) -> int:
        return sum(
            1
            for e in self.entries
            if (group is None or e.group == group)
            and (context is None or e.context == context)
        )

    def save_json(self, path):
        payload = {
            "version": 1,
            "entries": [
                {"name": e.name, "group": e.group, "context": e.context}
                for e in self.entries
            ],
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1)

    @classmethod
    def load_json(cls, path):
        with open(path) as f:
            payload = json.load(f)
        manifest = cls()
        got = [(e["name"], e["group"], e["context"]) for e in payload["entries"]]
        want = [(e.name, e.group, e.context) for e in manifest.entries]
        if got != want:
            raise ValueError(f"{path} does not match the normative manifest")
        return manifest


_DEFAULT = None


def default_manifest() -> FeatureManifest:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = FeatureManifest()
    return _DEFAULT
