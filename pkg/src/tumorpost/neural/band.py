"""Boundary-band datasets and voxel relabelling.

The band is every voxel with |signed distance| <= d_max around the current
tumor surface; voxels at d <= 0 are positive examples (the d = 0 surface
counts as inside), voxels at 0 < d <= d_max negative.  Patches are clamped
at volume borders by edge replication.
"""

import numpy as np

from ..volumes import Mask3D, Volume3D, NORMALIZED_8BIT, require_same_grid, signed_edt


def make_band_dataset(volume: Volume3D, mask: Mask3D, d_max: float = 6.0):
    """Labelled voxel list for the band; returns (coords_zyx, labels)."""
    require_same_grid(volume, mask, "volume and mask")
    if not mask.data.any():
        raise ValueError("mask is empty; no boundary band exists")
    d = signed_edt(mask).data
    band = np.abs(d) <= d_max
    coords = np.argwhere(band).astype(np.int64)
    labels = (d[band] <= 0).astype(np.int64)
    return coords, labels


def extract_patches(volume: Volume3D, coords_zyx, patch_size: int, center=False):
    """(N, s, s, s) float64 patches in [0, 1], centred on each voxel.

    With center=True the per-patch mean is subtracted, which makes the
    classifier invariant to global intensity shifts.
    """
    half = patch_size // 2
    data = volume.data.astype(np.float64)
    if volume.value_kind == NORMALIZED_8BIT:
        data = data / 255.0
    padded = np.pad(data, half, mode="edge")
    n = coords_zyx.shape[0]
    out = np.empty((n, patch_size, patch_size, patch_size))
    for i, (z, y, x) in enumerate(coords_zyx):
        out[i] = padded[z:z + patch_size, y:y + patch_size, x:x + patch_size]
    if center:
        out -= out.mean(axis=(1, 2, 3), keepdims=True)
    return out


def refine_labels(mask: Mask3D, volume: Volume3D, model, d_max: float = 6.0,
                  batch: int = 512) -> Mask3D:
    """Relabel band voxels by thresholding the patch classifier at 0.5;
    voxels outside the band never change."""
    require_same_grid(volume, mask, "volume and mask")
    if not mask.data.any():
        return Mask3D(mask.data.copy(), mask.spacing)
    d = signed_edt(mask).data
    band = np.abs(d) <= d_max
    coords = np.argwhere(band).astype(np.int64)
    out = mask.data.copy()
    s = model.config.patch_size
    center = model.config.center_patches
    for lo in range(0, coords.shape[0], batch):
        chunk = coords[lo:lo + batch]
        patches = extract_patches(volume, chunk, s, center=center)
        probs = model.forward(patches)
        out[tuple(chunk.T)] = (probs >= 0.5).astype(np.uint8)
    return Mask3D(out, mask.spacing)
