"""Synthetic CT-like phantoms with ground truth and degraded probability maps.

An ellipsoidal liver in soft-tissue background, hypodense spherical lesions,
bright vessel tubes as false-positive bait, plus seeded degradations of the
probability maps (blur, in-plane speckle, vessel leakage, lesion slice dips
and an optional one-voxel over-segmentation bias).  HU levels mimic
portal-venous contrast (liver 60, lesion 40, vessel 150 over background 0);
they are synthetic conventions, not clinical values.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from . import rng as rngmod
from .volumes import HU_FLOAT, Mask3D, ProbMap3D, Volume3D

HU_BACKGROUND = 0.0
HU_LIVER = 60.0
HU_LESION = 40.0
HU_VESSEL = 150.0


@dataclass
class Lesion:
    center: tuple      # (z, y, x) voxel coordinates
    radius_mm: float

    def size_class(self, spacing=(1.0, 1.0, 1.0)):
        d = 2.0 * self.radius_mm
        if d < 10.0:
            return "small"
        if d <= 30.0:
            return "medium"
        return "large"


@dataclass
class VesselTube:
    p0: tuple          # (z, y, x) voxel coordinates
    p1: tuple
    radius_vox: float


@dataclass
class PhantomSpec:
    dims: tuple = (40, 72, 72)          # (nz, ny, nx)
    spacing: tuple = (1.0, 1.0, 1.0)
    liver_center: tuple = (20.0, 36.0, 36.0)
    liver_radii: tuple = (16.0, 26.0, 28.0)  # voxel radii along (z, y, x)
    lesions: list = field(default_factory=list)
    vessels: list = field(default_factory=list)
    noise_sigma_hu: float = 5.0
    blur_sigma: float = 1.2
    speckle_count: int = 30
    speckle_amp: float = 0.85
    vessel_leak_amp: float = 0.85
    slice_dip_count: int = 2
    slice_dip_factor: float = 0.35
    prob_dilate_bias: int = 1
    seed: int = 0

    def validate(self):
        cz, cy, cx = self.liver_center
        rz, ry, rx = self.liver_radii
        for les in self.lesions:
            z, y, x = les.center
            r = les.radius_mm / min(self.spacing)
            # sufficient containment test: centre inside the liver ellipsoid
            # shrunk by the lesion radius along every axis
            if r >= min(rz, ry, rx):
                raise ValueError(f"lesion at {les.center} larger than the liver")
            u = (
                ((z - cz) / (rz - r)) ** 2
                + ((y - cy) / (ry - r)) ** 2
                + ((x - cx) / (rx - r)) ** 2
            )
            if u > 1.0:
                raise ValueError(f"lesion at {les.center} extends outside the liver")

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            payload = json.load(f)
        payload["lesions"] = [Lesion(tuple(l["center"]), l["radius_mm"])
                              for l in payload.get("lesions", [])]
        payload["vessels"] = [
            VesselTube(tuple(v["p0"]), tuple(v["p1"]), v["radius_vox"])
            for v in payload.get("vessels", [])
        ]
        for key in ("dims", "spacing", "liver_center", "liver_radii"):
            payload[key] = tuple(payload[key])
        return cls(**payload)


def _ellipsoid_mask(dims, center, radii):
    zz, yy, xx = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    cz, cy, cx = center
    rz, ry, rx = radii
    return (
        ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    ) <= 1.0


def _sphere_mask(dims, center, radius_vox):
    zz, yy, xx = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    cz, cy, cx = center
    return (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= radius_vox ** 2


def _tube_mask(dims, p0, p1, radius):
    zz, yy, xx = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims],
                             indexing="ij")
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length2 = float(axis @ axis)
    pz = zz - p0[0]
    py = yy - p0[1]
    px = xx - p0[2]
    t = (pz * axis[0] + py * axis[1] + px * axis[2]) / max(length2, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    dz = pz - t * axis[0]
    dy = py - t * axis[1]
    dx = px - t * axis[2]
    return dz ** 2 + dy ** 2 + dx ** 2 <= radius ** 2


def generate_phantom(spec: PhantomSpec):
    """Rasterize the spec; returns (ct, liver, tumor, p_liver, p_tumor)."""
    spec.validate()
    dims = tuple(spec.dims)
    liver = _ellipsoid_mask(dims, spec.liver_center, spec.liver_radii)
    tumor = np.zeros(dims, dtype=bool)
    for les in spec.lesions:
        r_vox = les.radius_mm / min(spec.spacing)
        tumor |= _sphere_mask(dims, les.center, r_vox)
    tumor &= liver
    vessels = np.zeros(dims, dtype=bool)
    for tube in spec.vessels:
        vessels |= _tube_mask(dims, tube.p0, tube.p1, tube.radius_vox)
    vessels &= liver
    vessels &= ~tumor  # bait never overlaps ground truth

    ct = np.full(dims, HU_BACKGROUND)
    ct[liver] = HU_LIVER
    ct[vessels] = HU_VESSEL
    ct[tumor] = HU_LESION
    gen = rngmod.stream(spec.seed, "phantom", "ct-noise")
    if spec.noise_sigma_hu > 0:
        ct = ct + gen.normal(0.0, spec.noise_sigma_hu, size=dims)

    p_liver = ndimage.gaussian_filter(liver.astype(np.float64), spec.blur_sigma)
    p_liver = np.clip(p_liver * 0.98, 0.0, 1.0)

    base = tumor
    if spec.prob_dilate_bias > 0:
        base = ndimage.binary_dilation(
            tumor, structure=ndimage.generate_binary_structure(3, 1),
            iterations=spec.prob_dilate_bias,
        ) & liver
    p_tumor = ndimage.gaussian_filter(base.astype(np.float64), spec.blur_sigma) * 0.92

    # in-plane speckle: thin 5-voxel crosses (opening removes them entirely)
    sgen = rngmod.stream(spec.seed, "phantom", "speckle")
    liver_only = np.argwhere(liver & ~tumor & ~vessels)
    for _ in range(spec.speckle_count):
        if liver_only.shape[0] == 0:
            break
        z, y, x = liver_only[int(sgen.integers(liver_only.shape[0]))]
        y0, y1 = max(y - 1, 0), min(y + 2, dims[1])
        x0, x1 = max(x - 1, 0), min(x + 2, dims[2])
        p_tumor[z, y, x0:x1] = np.maximum(p_tumor[z, y, x0:x1], spec.speckle_amp)
        p_tumor[z, y0:y1, x] = np.maximum(p_tumor[z, y0:y1, x], spec.speckle_amp)

    # vessel leakage into the tumor map
    if vessels.any() and spec.vessel_leak_amp > 0:
        leak = ndimage.gaussian_filter(vessels.astype(np.float64), 0.8)
        leak = leak / max(leak.max(), 1e-12) * spec.vessel_leak_amp
        p_tumor = np.maximum(p_tumor, leak)

    # lesion slice dips: attenuate whole axial planes crossing lesions
    dgen = rngmod.stream(spec.seed, "phantom", "dips")
    lesion_slices = np.unique(np.argwhere(tumor)[:, 0]) if tumor.any() else []
    interior = [
        z for z in lesion_slices
        if z - 1 in lesion_slices and z + 1 in lesion_slices
    ]
    if len(interior) and spec.slice_dip_count > 0:
        pick = dgen.choice(
            len(interior), size=min(spec.slice_dip_count, len(interior)),
            replace=False,
        )
        for k in sorted(pick.tolist()):
            p_tumor[interior[k]] *= spec.slice_dip_factor

    p_tumor = np.clip(p_tumor, 0.0, 1.0)
    return (
        Volume3D(ct.astype(np.float32), spec.spacing, HU_FLOAT),
        Mask3D(liver.astype(np.uint8), spec.spacing),
        Mask3D(tumor.astype(np.uint8), spec.spacing),
        ProbMap3D(p_liver.astype(np.float32), spec.spacing),
        ProbMap3D(p_tumor.astype(np.float32), spec.spacing),
    )


def perturb(ct: Volume3D, noise_sigma_hu: float, intensity_scale: float, seed: int = 0) -> Volume3D:
    """v' = scale * v + N(0, sigma^2) iid; robustness-analysis perturbation."""
    if ct.value_kind != HU_FLOAT:
        raise ValueError("perturb expects an HU-float volume")
    if noise_sigma_hu < 0 or noise_sigma_hu > 10:
        raise ValueError("noise sigma must be in [0, 10] HU")
    if not 0.9 <= intensity_scale <= 1.1:
        raise ValueError("intensity scale must be in [0.9, 1.1]")
    gen = rngmod.stream(seed, "perturb")
    data = intensity_scale * ct.data.astype(np.float64)
    if noise_sigma_hu > 0:
        data = data + gen.normal(0.0, noise_sigma_hu, size=data.shape)
    return Volume3D(data.astype(np.float32), ct.spacing, HU_FLOAT)


def standard_phantom_spec(case_index: int, master_seed: int = 0,
                          dims=(40, 72, 72)) -> PhantomSpec:
    """Deterministic spec for the standard noisy suite (one per case index)."""
    gen = rngmod.stream(master_seed, "suite", case_index)
    nz, ny, nx = dims
    center = (nz / 2.0, ny / 2.0, nx / 2.0)
    radii = (nz * 0.40, ny * 0.36, nx * 0.39)
    spec = PhantomSpec(
        dims=dims,
        liver_center=center,
        liver_radii=radii,
        seed=int(gen.integers(2 ** 31)),
    )
    n_lesions = int(gen.integers(3, 6))
    placed = []
    for _ in range(n_lesions * 40):
        if len(placed) >= n_lesions:
            break
        r_mm = float(gen.uniform(4.5, 9.5))
        u = gen.normal(size=3)
        u = u / np.linalg.norm(u)
        rad = float(gen.uniform(0.0, 0.92))
        shrunk = np.asarray(radii) - (r_mm + 1.5)
        if shrunk.min() <= 0:
            continue
        pos = np.asarray(center) + u * rad * shrunk
        cand = Lesion(tuple(float(p) for p in pos), r_mm)
        if any(
            np.linalg.norm(np.asarray(cand.center) - np.asarray(o.center))
            < cand.radius_mm + o.radius_mm + 4
            for o in placed
        ):
            continue
        placed.append(cand)
    spec.lesions = placed
    n_vessels = int(gen.integers(2, 4))
    vessels = []
    for _ in range(n_vessels * 30):
        if len(vessels) >= n_vessels:
            break
        y = float(gen.uniform(center[1] - radii[1] * 0.5, center[1] + radii[1] * 0.5))
        x = float(gen.uniform(center[2] - radii[2] * 0.5, center[2] + radii[2] * 0.5))
        z0 = float(gen.uniform(center[0] - radii[0] * 0.6, center[0] - radii[0] * 0.1))
        z1 = z0 + float(gen.uniform(radii[0] * 0.5, radii[0] * 1.0))
        tube = VesselTube((z0, y, x), (z1, y + gen.uniform(-6, 6), x + gen.uniform(-6, 6)),
                          float(gen.uniform(2.2, 3.0)))
        if any(
            np.linalg.norm(np.asarray(les.center) - np.asarray(tube.p0)) < les.radius_mm + 6
            or np.linalg.norm(np.asarray(les.center) - np.asarray(tube.p1)) < les.radius_mm + 6
            for les in spec.lesions
        ):
            continue
        vessels.append(tube)
    spec.vessels = vessels
    return spec
