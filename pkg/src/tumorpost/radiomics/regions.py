"""Candidate tumor regions: positive lesions, sampled negatives, boundary bands.

Coordinates are (N, 3) int arrays with columns (z, y, x), kept sorted in
raster order so every downstream computation is order-independent.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..volumes import Mask3D, Volume3D, connected_components, edt_sq, boundary_voxels, signed_edt


@dataclass
class CandidateRegion:
    """A connected (or sampled) voxel set with provenance."""

    coords_zyx: np.ndarray = field(repr=False)
    shape: tuple                      # grid shape (nz, ny, nx)
    source: str = "lesion-component"  # or "sampled-negative"
    label: str = "unknown"            # "positive" / "negative" / "unknown"
    region_id: str = ""
    note: str = ""

    def __post_init__(self):
        coords = np.asarray(self.coords_zyx, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] == 0:
            raise ValueError("region needs a non-empty (N, 3) coordinate array")
        if (coords < 0).any() or (coords >= np.asarray(self.shape)).any():
            raise ValueError("region voxels out of volume bounds")
        flat = np.ravel_multi_index(tuple(coords.T), self.shape)
        order = np.argsort(flat, kind="stable")
        self.coords_zyx = coords[order]

    @property
    def size(self) -> int:
        return self.coords_zyx.shape[0]

    @property
    def bbox_min(self):
        return tuple(int(c) for c in self.coords_zyx.min(axis=0))

    @property
    def bbox_max(self):
        return tuple(int(c) for c in self.coords_zyx.max(axis=0))

    def to_mask(self, spacing=(1.0, 1.0, 1.0)) -> Mask3D:
        data = np.zeros(self.shape, dtype=np.uint8)
        data[tuple(self.coords_zyx.T)] = 1
        return Mask3D(data, spacing)


def extract_positive_regions(tumor_gt: Mask3D):
    """One positive region per 26-connected tumor component."""
    _, comps = connected_components(tumor_gt, connectivity=26)
    return [
        CandidateRegion(
            c.coords_zyx,
            tumor_gt.data.shape,
            source="lesion-component",
            label="positive",
            region_id=f"pos-{c.label}",
        )
        for c in comps
    ]


def regions_from_mask(mask: Mask3D, source="lesion-component", label="unknown", prefix="cand"):
    """Candidate region per 26-connected component of an arbitrary mask."""
    _, comps = connected_components(mask, connectivity=26)
    return [
        CandidateRegion(
            c.coords_zyx, mask.data.shape, source=source, label=label,
            region_id=f"{prefix}-{c.label}",
        )
        for c in comps
    ]


def boundary_band(region: CandidateRegion, width: float = 2.0) -> CandidateRegion:
    """Voxels with |signed distance| <= width around the region surface.

    Works on a bbox crop with margin so large grids stay cheap.  Degenerate
    empty bands fall back to the whole region with a note.
    """
    margin = int(np.ceil(width)) + 1
    zmin, ymin, xmin = region.bbox_min
    zmax, ymax, xmax = region.bbox_max
    lo = np.maximum(np.array([zmin, ymin, xmin]) - margin, 0)
    hi = np.minimum(
        np.array([zmax, ymax, xmax]) + margin + 1, np.asarray(region.shape)
    )
    crop_shape = tuple(hi - lo)
    crop = np.zeros(crop_shape, dtype=np.uint8)
    local = region.coords_zyx - lo
    crop[tuple(local.T)] = 1
    sdf = signed_edt(Mask3D(crop, (1.0, 1.0, 1.0)))
    sel = np.abs(sdf.data) <= width
    if not sel.any():
        return CandidateRegion(
            region.coords_zyx, region.shape, source=region.source,
            label=region.label, region_id=region.region_id + "-band",
            note="band-fallback",
        )
    band_local = np.argwhere(sel)
    return CandidateRegion(
        band_local + lo, region.shape, source=region.source,
        label=region.label, region_id=region.region_id + "-band",
    )


@dataclass
class SamplerConfig:
    """Negative-region sampling parameters."""

    r_min: int = 2
    r_step: int = 2
    r_max: int = 48
    quota_total: int = 1000
    boundary_fraction: float = 0.6
    max_retries: int = 100
    reject_outside_liver: float = 0.20
    reject_tumor_fraction: float = 0.10
    seed: int = 0

    def radii(self):
        return list(range(self.r_min, self.r_max + 1, self.r_step))


def _split_counts(total, n_bins):
    """floor(total/n) everywhere, remainder to the smallest bins."""
    base = total // n_bins
    rem = total % n_bins
    return [base + (1 if i < rem else 0) for i in range(n_bins)]


def sampler_quotas(cfg: SamplerConfig):
    """Per-radius (boundary, interior) quotas.

    The total quota splits evenly over radii with the remainder assigned to
    the smallest radii; the boundary share is round(0.6 * total) distributed
    the same way, capped per radius by its quota.
    """
    radii = cfg.radii()
    per_radius = _split_counts(cfg.quota_total, len(radii))
    boundary_total = int(round(cfg.boundary_fraction * cfg.quota_total))
    bnd = _split_counts(boundary_total, len(radii))
    out = []
    for q, b in zip(per_radius, bnd):
        b = min(b, q)
        out.append((b, q - b))
    return radii, out


def _sphere_offsets(r):
    g = np.arange(-r, r + 1)
    zz, yy, xx = np.meshgrid(g, g, g, indexing="ij")
    keep = zz * zz + yy * yy + xx * xx <= r * r
    return np.stack([zz[keep], yy[keep], xx[keep]], axis=1)


def sample_negative_regions(ct: Volume3D, liver: Mask3D, tumor: Mask3D, cfg: SamplerConfig):
    """Spherical negative candidates over the radius grid.

    Per radius, boundary seeds are liver voxels within r of the liver surface
    and interior seeds liver voxels at least r inside; candidates with more
    than 20% of their (ideal sphere) voxels outside the liver or more than
    10% tumor are rejected and reseeded up to max_retries times per slot.
    Failures are returned as warning records, never silently dropped.

    Returns (regions, warnings_list).
    """
    if not liver.data.any():
        raise ValueError("liver mask is empty")
    liver_fg = liver.data.astype(bool)
    tumor_fg = tumor.data.astype(bool)
    # unsigned distance of liver voxels to the liver surface
    bnd = boundary_voxels(liver_fg)
    inner_d = np.sqrt(edt_sq(bnd))
    shape = liver.data.shape
    radii, quotas = sampler_quotas(cfg)
    regions = []
    warn_records = []
    for radius, (n_bnd, n_int) in zip(radii, quotas):
        offs = _sphere_offsets(radius)
        n_sphere = offs.shape[0]
        near = liver_fg & (inner_d <= radius)
        deep = liver_fg & (inner_d >= radius)
        pools = {
            "boundary": np.argwhere(near & ~tumor_fg),
            "interior": np.argwhere(deep & ~tumor_fg),
        }
        plan = [("boundary", n_bnd), ("interior", n_int)]
        for kind, count in plan:
            pool = pools[kind]
            for slot in range(count):
                gen = rngmod.stream(cfg.seed, "sampler", radius, kind, slot)
                placed = False
                if pool.shape[0] > 0:
                    for _ in range(cfg.max_retries):
                        seed_vox = pool[int(gen.integers(pool.shape[0]))]
                        vox = seed_vox[None, :] + offs
                        in_grid = (
                            (vox >= 0).all(axis=1)
                            & (vox < np.asarray(shape)).all(axis=1)
                        )
                        vin = vox[in_grid]
                        inside_liver = liver_fg[tuple(vin.T)]
                        n_inside = int(inside_liver.sum())
                        frac_outside = 1.0 - n_inside / n_sphere
                        if frac_outside > cfg.reject_outside_liver:
                            continue
                        n_tum = int(tumor_fg[tuple(vin.T)].sum())
                        if n_tum / n_sphere > cfg.reject_tumor_fraction:
                            continue
                        regions.append(
                            CandidateRegion(
                                vin, shape, source="sampled-negative",
                                label="negative",
                                region_id=f"neg-r{radius}-{kind}-{slot}",
                            )
                        )
                        placed = True
                        break
                if not placed:
                    msg = (
                        f"radius {radius} {kind} slot {slot}: no admissible "
                        f"candidate in {cfg.max_retries} attempts"
                    )
                    warn_records.append(msg)
    if warn_records:
        warnings.warn(
            f"negative sampler filled {len(regions)} of "
            f"{len(regions) + len(warn_records)} slots", stacklevel=2
        )
    return regions, warn_records
