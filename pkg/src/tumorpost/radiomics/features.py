"""The 728-entry handcrafted feature extractor.

Quantization convention: normalized-8bit volumes use fixed level widths
(256/n_levels) so features are comparable across regions; float-valued data
(HU volumes, wavelet sub-bands) is min-max quantized over the region values.
Entropy-type features use log base 2.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import QhullError, ConvexHull
from scipy.spatial.distance import pdist

from ..volumes import NORMALIZED_8BIT, Mask3D, Volume3D, signed_edt
from .manifest import FeatureManifest, default_manifest, GROUP_NAMES, NONSHAPE_GROUPS
from .regions import CandidateRegion, boundary_band
from .wavelet import BAND_NAMES, haar3d

_EPS = 1e-12

# the 13 unique displacement vectors of the 26-neighbourhood (positive half)
DIRECTIONS_13 = tuple(
    (dz, dy, dx)
    for dz in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dx in (-1, 0, 1)
    if (dz, dy, dx) > (0, 0, 0)
)


@dataclass
class FeatureVector:
    values: np.ndarray = field(repr=False)
    region_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.isfinite(self.values).all():
            bad = np.flatnonzero(~np.isfinite(self.values))
            raise ValueError(f"non-finite feature values at indices {bad[:8]}")


def _crop_with_margin(data, region, margin):
    lo = np.maximum(np.asarray(region.bbox_min) - margin, 0)
    hi = np.minimum(np.asarray(region.bbox_max) + margin + 1, np.asarray(data.shape))
    crop = data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    local = region.coords_zyx - lo
    return crop, local, lo


def _region_mask_crop(region, margin=0):
    lo = np.maximum(np.asarray(region.bbox_min) - margin, 0)
    hi = np.minimum(
        np.asarray(region.bbox_max) + margin + 1, np.asarray(region.shape)
    )
    reg = np.zeros(tuple(hi - lo), dtype=bool)
    reg[tuple((region.coords_zyx - lo).T)] = True
    return reg, lo


def _quantize(crop, region_values, n_levels, fixed_8bit):
    """Integer levels 0..n_levels-1 for texture matrices."""
    if fixed_8bit:
        width = 256 // n_levels
        return (np.clip(crop, 0, 255).astype(np.int64)) // width
    vmin = float(region_values.min())
    vmax = float(region_values.max())
    if vmax - vmin < _EPS:
        return np.zeros(crop.shape, dtype=np.int64)
    lvl = np.floor((crop - vmin) / (vmax - vmin) * n_levels)
    return np.clip(lvl, 0, n_levels - 1).astype(np.int64)


def _discrete_probs(values, fixed_8bit):
    """Probability over 256 levels for entropy/uniformity/mode."""
    if fixed_8bit:
        lv = np.clip(np.floor(values + 0.5), 0, 255).astype(np.int64)
    else:
        vmin, vmax = float(values.min()), float(values.max())
        if vmax - vmin < _EPS:
            lv = np.zeros(values.shape, dtype=np.int64)
        else:
            lv = np.clip(
                np.floor((values - vmin) / (vmax - vmin) * 256), 0, 255
            ).astype(np.int64)
    counts = np.bincount(lv, minlength=256)
    return counts / values.size


def _entropy_bits(p):
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) if p.size else 0.0


def _skew_kurt(x, std):
    if std < _EPS:
        return 0.0, 0.0
    c = x - x.mean()
    m3 = float((c ** 3).mean())
    m4 = float((c ** 4).mean())
    return m3 / std ** 3, m4 / std ** 4 - 3.0


def _firstorder(values, voxel_volume, fixed_8bit):
    # canonical value order makes every statistic exactly permutation invariant
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    mean = float(x.mean())
    std = float(x.std())
    uniq, counts = np.unique(x, return_counts=True)
    mode = float(uniq[np.argmax(counts)])  # argmax ties -> smallest value
    p5, p10, p25, p50, p75, p90, p95 = np.percentile(x, [5, 10, 25, 50, 75, 90, 95])
    sub = x[(x >= p10) & (x <= p90)]
    if sub.size:
        rmad = float(np.abs(sub - sub.mean()).mean())
    else:
        rmad = 0.0
    skew, kurt = _skew_kurt(x, std)
    probs = _discrete_probs(x, fixed_8bit)
    energy = float((x ** 2).sum())
    denom = p75 + p25
    qcd = float((p75 - p25) / denom) if abs(denom) > _EPS else 0.0
    cv = std / abs(mean) if abs(mean) > _EPS else 0.0

    # binned histogram on 64 bins of width 4 (8-bit range); float data is
    # min-max mapped onto the same 64 bins
    if fixed_8bit:
        bins = np.clip(x, 0, 255).astype(np.int64) // 4
    else:
        vmin, vmax = float(x.min()), float(x.max())
        if vmax - vmin < _EPS:
            bins = np.zeros(n, dtype=np.int64)
        else:
            bins = np.clip(
                np.floor((x - vmin) / (vmax - vmin) * 64), 0, 63
            ).astype(np.int64)
    q = np.bincount(bins, minlength=64) / n
    b_idx = np.arange(64, dtype=np.float64)
    b_mean = float((b_idx * q).sum())
    b_var = float(((b_idx - b_mean) ** 2 * q).sum())
    b_std = np.sqrt(b_var)
    if b_std < _EPS:
        b_skew = b_kurt = 0.0
    else:
        b_skew = float(((b_idx - b_mean) ** 3 * q).sum()) / b_std ** 3
        b_kurt = float(((b_idx - b_mean) ** 4 * q).sum()) / b_std ** 4 - 3.0

    return np.array([
        float(x.min()), float(x.max()), float(x.max() - x.min()), mean,
        float(p50), mode, std, std ** 2,
        float(np.abs(x - mean).mean()), rmad, skew, kurt,
        energy, voxel_volume * energy,
        _entropy_bits(probs), float((probs ** 2).sum()),
        float(np.sqrt((x ** 2).mean())), cv,
        float(p5), float(p10), float(p25), float(p75), float(p90), float(p95),
        float(p75 - p25), float(p90 - p10), qcd,
        _entropy_bits(q), float((q ** 2).sum()), float(q.max()),
        float((q > 0).sum()), b_skew, b_kurt, b_mean,
    ])


def _gradient_stats(crop, spacing, local_coords, sigma=1.5):
    smoothed = ndimage.gaussian_filter(crop.astype(np.float64), sigma=sigma)
    sz, sy, sx = spacing[2], spacing[1], spacing[0]
    gz, gy, gx = np.gradient(smoothed, sz, sy, sx)
    mag = np.sqrt(gx ** 2 + gy ** 2 + gz ** 2)
    vals = mag[tuple(local_coords.T)]
    return np.array([float(vals.mean()), float(vals.std())])


def _shift_slices(shape, d):
    src = []
    dst = []
    for n, dc in zip(shape, d):
        src.append(slice(max(0, -dc), n - max(0, dc)))
        dst.append(slice(max(0, dc), n - max(0, -dc)))
    return tuple(src), tuple(dst)


def _rlm_matrix(lvl, reg, n_levels, directions):
    max_len = max(lvl.shape) + 1
    R = np.zeros((n_levels, max_len + 1), dtype=np.float64)
    n_runs = 0
    for d in directions:
        d = np.asarray(d)
        src, dst = _shift_slices(lvl.shape, d)
        chain = np.zeros(lvl.shape, dtype=bool)
        chain[src] = reg[src] & reg[dst] & (lvl[src] == lvl[dst])
        pred = np.zeros(lvl.shape, dtype=bool)
        pred[dst] = chain[src]
        start = reg & ~pred
        pos = np.argwhere(start)
        if pos.shape[0] == 0:
            continue
        start_levels = lvl[tuple(pos.T)]
        lengths = np.ones(pos.shape[0], dtype=np.int64)
        alive = chain[tuple(pos.T)]
        pos = pos.copy()
        while alive.any():
            idx = np.flatnonzero(alive)
            pos[idx] += d
            lengths[idx] += 1
            alive[idx] = chain[tuple(pos[idx].T)]
        np.add.at(R, (start_levels, lengths), 1.0)
        n_runs += pos.shape[0]
    return R, n_runs


def _rlm_features(lvl, reg, n_levels, directions):
    R, n_runs = _rlm_matrix(lvl, reg, n_levels, directions)
    n_vox = int(reg.sum())
    if n_runs == 0:
        return np.zeros(11)
    j = np.arange(R.shape[1], dtype=np.float64)
    j[0] = 1.0  # length-0 column is always empty
    g = np.arange(1, n_levels + 1, dtype=np.float64)  # 1-based gray values
    Rg = R.sum(axis=1)
    Rj = R.sum(axis=0)
    inv_j2 = 1.0 / j ** 2
    j2 = j ** 2
    inv_g2 = 1.0 / g ** 2
    g2 = g ** 2
    nr = float(n_runs)
    sre = float((Rj * inv_j2).sum()) / nr
    lre = float((Rj * j2).sum()) / nr
    gln = float((Rg ** 2).sum()) / nr
    rln = float((Rj ** 2).sum()) / nr
    rp = nr / (n_vox * len(directions))
    lgre = float((Rg * inv_g2).sum()) / nr
    hgre = float((Rg * g2).sum()) / nr
    srlge = float((R * np.outer(inv_g2, inv_j2)).sum()) / nr
    srhge = float((R * np.outer(g2, inv_j2)).sum()) / nr
    lrlge = float((R * np.outer(inv_g2, j2)).sum()) / nr
    lrhge = float((R * np.outer(g2, j2)).sum()) / nr
    return np.array([sre, lre, gln, rln, rp, lgre, hgre, srlge, srhge, lrlge, lrhge])


def _glcm_matrix(lvl, reg, n_levels):
    P = np.zeros((n_levels, n_levels), dtype=np.float64)
    for d in DIRECTIONS_13:
        src, dst = _shift_slices(lvl.shape, d)
        m = reg[src] & reg[dst]
        if not m.any():
            continue
        a = lvl[src][m]
        b = lvl[dst][m]
        cnt = np.bincount(a * n_levels + b, minlength=n_levels * n_levels)
        cnt = cnt.reshape(n_levels, n_levels).astype(np.float64)
        P += cnt
        P += cnt.T  # symmetric accumulation
    return P


def _glcm_features(lvl, reg, n_levels=128):
    P = _glcm_matrix(lvl, reg, n_levels)
    total = P.sum()
    if total <= 0:
        # single-voxel regions have no voxel pairs; degenerate all-zero block
        out = np.zeros(22)
        out[1] = 1.0   # correlation convention
        out[2] = 1.0   # energy of a deterministic distribution
        out[10] = 1.0  # max probability
        return out
    p = P / total
    i = np.arange(n_levels, dtype=np.float64)
    px = p.sum(axis=1)
    ii = i[:, None]
    jj = i[None, :]
    diff = ii - jj
    mu_x = float((i * px).sum())
    sig_x = float(np.sqrt(((i - mu_x) ** 2 * px).sum()))
    contrast = float((diff ** 2 * p).sum())
    dissimilarity = float((np.abs(diff) * p).sum())
    asm = float((p ** 2).sum())
    entropy = _entropy_bits(p.ravel())
    homogeneity = float((p / (1.0 + diff ** 2)).sum())
    autocorr = float((ii * jj * p).sum())
    dev = ii + jj - 2.0 * mu_x
    cluster_shade = float((dev ** 3 * p).sum())
    cluster_prom = float((dev ** 4 * p).sum())
    cluster_tend = float((dev ** 2 * p).sum())
    max_prob = float(p.max())
    # p_{x+y} over k = 0..2(L-1), p_{x-y} over k = 0..L-1
    k_sum = np.arange(2 * n_levels - 1, dtype=np.float64)
    p_sum = np.zeros(2 * n_levels - 1)
    np.add.at(p_sum, (np.add.outer(np.arange(n_levels), np.arange(n_levels))).ravel(), p.ravel())
    k_dif = np.arange(n_levels, dtype=np.float64)
    p_dif = np.zeros(n_levels)
    np.add.at(p_dif, np.abs(np.subtract.outer(np.arange(n_levels), np.arange(n_levels))).ravel(), p.ravel())
    sum_avg = float((k_sum * p_sum).sum())
    sum_var = float(((k_sum - sum_avg) ** 2 * p_sum).sum())
    sum_ent = _entropy_bits(p_sum)
    dif_avg = float((k_dif * p_dif).sum())
    dif_var = float(((k_dif - dif_avg) ** 2 * p_dif).sum())
    dif_ent = _entropy_bits(p_dif)
    if sig_x < _EPS:
        correlation = 1.0
    else:
        correlation = (autocorr - mu_x * mu_x) / (sig_x * sig_x)
    hx = _entropy_bits(px)
    outer_px = np.outer(px, px)
    nz = (p > 0) & (outer_px > 0)
    hxy1 = float(-(p[nz] * np.log2(outer_px[nz])).sum())
    nz2 = outer_px > 0
    hxy2 = float(-(outer_px[nz2] * np.log2(outer_px[nz2])).sum())
    imc1 = (entropy - hxy1) / hx if hx > _EPS else 0.0
    imc2 = float(np.sqrt(max(0.0, 1.0 - np.exp(-2.0 * (hxy2 - entropy)))))
    off = diff != 0
    inverse_var = float((p[off] / diff[off] ** 2).sum())
    joint_avg = mu_x
    joint_var = float(((ii - mu_x) ** 2 * p).sum())
    return np.array([
        contrast, correlation, asm, entropy, homogeneity, dissimilarity,
        autocorr, cluster_shade, cluster_prom, cluster_tend, max_prob,
        sum_avg, sum_var, sum_ent, dif_avg, dif_var, dif_ent, imc1, imc2,
        inverse_var, joint_avg, joint_var,
    ])


def _surface_area(reg, spacing):
    sx, sy, sz = spacing
    face_area = {0: sx * sy, 1: sx * sz, 2: sy * sz}  # faces normal to z, y, x
    padded = np.pad(reg, 1)
    area = 0.0
    for axis in range(3):
        up = np.roll(padded, 1, axis=axis)
        dn = np.roll(padded, -1, axis=axis)
        exposed = (padded & ~up).sum() + (padded & ~dn).sum()
        area += float(exposed) * face_area[axis]
    return area


def _max_diameter(coords_mm):
    n = coords_mm.shape[0]
    if n == 1:
        return 0.0
    pts = coords_mm
    if n > 1500:
        try:
            hull = ConvexHull(pts)
            pts = pts[hull.vertices]
        except QhullError:
            pass  # degenerate (coplanar) set: fall through to direct search
    if pts.shape[0] > 4000:
        pts = pts[:: int(np.ceil(pts.shape[0] / 4000))]
    return float(pdist(pts).max())


def _shape(reg, spacing):
    sx, sy, sz = spacing
    n = int(reg.sum())
    vol = n * sx * sy * sz
    area = _surface_area(reg, spacing)
    sphericity = np.pi ** (1.0 / 3.0) * (6.0 * vol) ** (2.0 / 3.0) / area
    compact1 = vol / (np.sqrt(np.pi) * area ** 1.5)
    compact2 = 36.0 * np.pi * vol ** 2 / area ** 3
    coords = np.argwhere(reg).astype(np.float64)
    coords_mm = coords * np.array([sz, sy, sx])
    centered = coords_mm - coords_mm.mean(axis=0)
    cov = centered.T @ centered / n
    lam = np.clip(np.linalg.eigvalsh(cov), 0.0, None)  # ascending
    if lam[2] < _EPS:
        elongation = flatness = 1.0
    else:
        elongation = float(np.sqrt(lam[1] / lam[2]))
        flatness = float(np.sqrt(lam[0] / lam[2]))
    # diameter endpoints lie on the surface; restrict the pairwise search
    surf = reg & ~ndimage.binary_erosion(reg, border_value=0)
    surf_mm = np.argwhere(surf).astype(np.float64) * np.array([sz, sy, sx])
    diameter = _max_diameter(surf_mm)
    return np.array([
        vol, area, float(sphericity), float(compact1), float(compact2),
        elongation, flatness, diameter,
    ])


def _moments(values, coords_mm):
    w = np.asarray(values, dtype=np.float64)
    total = float(w.sum())
    if abs(total) < _EPS:
        w = np.ones_like(w)
        total = float(w.sum())
    c = (w[:, None] * coords_mm).sum(axis=0) / total
    x = coords_mm - c
    m = (w[:, None] * x).T @ x / total
    j1 = float(np.trace(m))
    j2 = float(
        m[0, 0] * m[1, 1] - m[0, 1] ** 2
        + m[0, 0] * m[2, 2] - m[0, 2] ** 2
        + m[1, 1] * m[2, 2] - m[1, 2] ** 2
    )
    j3 = float(np.linalg.det(m))
    return np.array([j1, j2, j3])


# ---------------------------------------------------------------------------
# public per-group operations
# ---------------------------------------------------------------------------


def _vox_volume(spacing):
    return float(spacing[0] * spacing[1] * spacing[2])


def first_order_features(region: CandidateRegion, volume: Volume3D) -> np.ndarray:
    values = volume.data[tuple(region.coords_zyx.T)].astype(np.float64)
    return _firstorder(values, _vox_volume(volume.spacing),
                       volume.value_kind == NORMALIZED_8BIT)


def gradient_features(region: CandidateRegion, volume: Volume3D, sigma_factor=1.5) -> np.ndarray:
    """Mean/std of Gaussian-smoothed gradient magnitude over the region.

    Smoothing sigma is sigma_factor voxels per axis (i.e. sigma_factor times
    the voxel spacing in physical units); gradients are per millimetre.
    """
    crop, local, _ = _crop_with_margin(volume.data, region, margin=8)
    return _gradient_stats(crop, volume.spacing, local, sigma=sigma_factor)


def rlm_features(region: CandidateRegion, volume: Volume3D, directions=None) -> np.ndarray:
    """Run-length features on 128 levels, summed over the 13 unique 3D
    directions (pass a direction subset for single-direction checks)."""
    directions = DIRECTIONS_13 if directions is None else tuple(directions)
    reg, lo = _region_mask_crop(region)
    crop = volume.data[
        lo[0]:lo[0] + reg.shape[0], lo[1]:lo[1] + reg.shape[1], lo[2]:lo[2] + reg.shape[2]
    ].astype(np.float64)
    values = crop[reg]
    lvl = _quantize(crop, values, 128, volume.value_kind == NORMALIZED_8BIT)
    return _rlm_features(lvl, reg, 128, directions)


def glcm_features(region: CandidateRegion, volume: Volume3D) -> np.ndarray:
    reg, lo = _region_mask_crop(region)
    crop = volume.data[
        lo[0]:lo[0] + reg.shape[0], lo[1]:lo[1] + reg.shape[1], lo[2]:lo[2] + reg.shape[2]
    ].astype(np.float64)
    values = crop[reg]
    lvl = _quantize(crop, values, 128, volume.value_kind == NORMALIZED_8BIT)
    return _glcm_features(lvl, reg, 128)


def shape_features(region: CandidateRegion, spacing) -> np.ndarray:
    reg, _ = _region_mask_crop(region)
    return _shape(reg, spacing)


def moment_invariants(region: CandidateRegion, volume: Volume3D) -> np.ndarray:
    values = volume.data[tuple(region.coords_zyx.T)].astype(np.float64)
    sx, sy, sz = volume.spacing
    coords_mm = region.coords_zyx.astype(np.float64) * np.array([sz, sy, sx])
    return _moments(values, coords_mm)


def wavelet_subbands(crop: np.ndarray) -> dict:
    """Single-level 3D Haar sub-bands of a volume crop (see wavelet module)."""
    if min(crop.shape) < 2:
        raise ValueError("crop dims must be >= 2 along every axis")
    return haar3d(crop)


def _nonshape_block(values, voxel_volume, fixed_8bit, lvl, reg, grad_crop,
                    grad_spacing, grad_local, coords_mm):
    parts = [
        _firstorder(values, voxel_volume, fixed_8bit),
        _gradient_stats(grad_crop, grad_spacing, grad_local),
        _rlm_features(lvl, reg, 128, DIRECTIONS_13),
        _glcm_features(lvl, reg, 128),
        _moments(values, coords_mm),
    ]
    return np.concatenate(parts)


def extract_features(region: CandidateRegion, volume: Volume3D,
                     manifest: FeatureManifest = None) -> FeatureVector:
    """Full 728-entry descriptor in manifest order: 80 core features, 72 on
    the boundary band, 72 on each Haar sub-band."""
    if manifest is None:
        manifest = default_manifest()
    fixed_8bit = volume.value_kind == NORMALIZED_8BIT
    spacing = volume.spacing
    vv = _vox_volume(spacing)
    sx, sy, sz = spacing
    mm = np.array([sz, sy, sx])

    def block_for(reg_obj):
        reg, lo = _region_mask_crop(reg_obj)
        crop = volume.data[
            lo[0]:lo[0] + reg.shape[0], lo[1]:lo[1] + reg.shape[1],
            lo[2]:lo[2] + reg.shape[2],
        ].astype(np.float64)
        values = crop[reg]
        lvl = _quantize(crop, values, 128, fixed_8bit)
        gcrop, glocal, _ = _crop_with_margin(volume.data, reg_obj, margin=8)
        coords_mm = reg_obj.coords_zyx.astype(np.float64) * mm
        return values, lvl, reg, gcrop, glocal, coords_mm

    out = []
    values, lvl, reg, gcrop, glocal, coords_mm = block_for(region)
    out.append(_firstorder(values, vv, fixed_8bit))
    out.append(_gradient_stats(gcrop, spacing, glocal))
    out.append(_rlm_features(lvl, reg, 128, DIRECTIONS_13))
    out.append(_glcm_features(lvl, reg, 128))
    out.append(shape_features(region, spacing))
    out.append(_moments(values, coords_mm))

    band = boundary_band(region, width=2.0)
    values, lvl, reg, gcrop, glocal, coords_mm = block_for(band)
    out.append(_nonshape_block(values, vv, fixed_8bit, lvl, reg, gcrop,
                               spacing, glocal, coords_mm))

    wcrop, _, _ = _crop_with_margin(volume.data, region, margin=2)
    bands = haar3d(wcrop.astype(np.float64))
    sub_spacing = (sx * 2, sy * 2, sz * 2)
    sub_mm = np.array([sz * 2, sy * 2, sx * 2])
    sub_vv = _vox_volume(sub_spacing)
    for name in BAND_NAMES:
        sub = bands[name]
        values = sub.ravel()
        reg = np.ones(sub.shape, dtype=bool)
        lvl = _quantize(sub, values, 128, fixed_8bit=False)
        coords = np.argwhere(reg).astype(np.float64) * sub_mm
        out.append(_nonshape_block(values, sub_vv, False, lvl, reg, sub,
                                   sub_spacing, np.argwhere(reg), coords))

    vec = np.concatenate(out)
    if vec.shape[0] != len(manifest):
        raise AssertionError(
            f"feature vector length {vec.shape[0]} != manifest {len(manifest)}"
        )
    return FeatureVector(vec, region_id=region.region_id)


# ---------------------------------------------------------------------------
# feature matrix I/O
# ---------------------------------------------------------------------------


def save_feature_csv(path, vectors, manifest: FeatureManifest = None):
    """CSV with region id first, then one column per manifest name; floats
    written in shortest round-trip form."""
    if manifest is None:
        manifest = default_manifest()
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["region_id"] + manifest.names)
        for v in vectors:
            writer.writerow([v.region_id] + [repr(float(x)) for x in v.values])


def load_feature_csv(path, manifest: FeatureManifest = None):
    if manifest is None:
        manifest = default_manifest()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[1:] != manifest.names:
            raise ValueError(f"{path}: header does not match manifest")
        vectors = [
            FeatureVector(np.array([float(x) for x in row[1:]]), region_id=row[0])
            for row in reader
        ]
    return vectors
