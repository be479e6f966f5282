"""Core 3D grid types, file I/O, preprocessing and spatial primitives.

Voxel data is stored as C-ordered numpy arrays indexed ``[z, y, x]``, which
makes the flat memory layout x-fastest.  Reported dims are ``(nx, ny, nz)``
and spacing ``(sx, sy, sz)`` in millimetres.  Coordinate arrays throughout
the package are ``(N, 3)`` integer arrays with columns ``(z, y, x)``.
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

HU_FLOAT = "hu-float"
NORMALIZED_8BIT = "normalized-8bit"

# HU window used for 8-bit normalization
HU_CLIP_LO = -100.0
HU_CLIP_HI = 400.0


class VolumeFormatError(ValueError):
    """Malformed volume file: bad header, dims/data mismatch or dtype."""


class GridMismatchError(ValueError):
    """Two fields expected to share a grid do not."""


def _check_grid(data, spacing):
    if not isinstance(data, np.ndarray) or data.ndim != 3:
        raise ValueError("expected a 3D numpy array")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive numbers, got {spacing}")


@dataclass
class Volume3D:
    """Scalar field on a 3D grid. data: (nz, ny, nx)."""

    data: np.ndarray
    spacing: tuple
    value_kind: str = HU_FLOAT

    def __post_init__(self):
        _check_grid(self.data, self.spacing)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.value_kind == NORMALIZED_8BIT:
            if self.data.dtype != np.uint8:
                if self.data.min() < 0 or self.data.max() > 255:
                    raise ValueError("normalized-8bit values must lie in [0, 255]")
                self.data = self.data.astype(np.uint8)
        elif self.value_kind == HU_FLOAT:
            if self.data.dtype != np.float32:
                self.data = self.data.astype(np.float32)
        else:
            raise ValueError(f"unknown value_kind {self.value_kind!r}")

    @property
    def dims(self):
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass
class Mask3D:
    """Binary field on a 3D grid; values are exactly 0 or 1."""

    data: np.ndarray
    spacing: tuple

    def __post_init__(self):
        _check_grid(self.data, self.spacing)
        self.spacing = tuple(float(s) for s in self.spacing)
        vals = np.unique(self.data)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("mask values must be exactly 0 or 1")
        if self.data.dtype != np.uint8:
            self.data = self.data.astype(np.uint8)

    @property
    def dims(self):
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def count(self) -> int:
        return int(self.data.sum())


@dataclass
class ProbMap3D:
    """Per-voxel probabilities in [0, 1] on a 3D grid."""

    data: np.ndarray
    spacing: tuple

    def __post_init__(self):
        _check_grid(self.data, self.spacing)
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")

    @property
    def dims(self):
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


def same_grid(a, b) -> bool:
    return a.data.shape == b.data.shape and a.spacing == b.spacing


def require_same_grid(a, b, what="fields"):
    if not same_grid(a, b):
        raise GridMismatchError(
            f"{what} must share one grid: {a.data.shape}/{a.spacing} vs "
            f"{b.data.shape}/{b.spacing}"
        )


@dataclass
class SliceStack:
    """3 neighbouring axial slices (plus optional liver-prior channel).

    slices: (C, ny, nx) float32 with C in {3, 4}; channel order is
    [z-1, z, z+1(, prior_z)] with edge replication at the volume ends.
    """

    slices: np.ndarray
    center_index: int

    def __post_init__(self):
        if self.slices.ndim != 3 or self.slices.shape[0] not in (3, 4):
            raise ValueError("slice stack needs 3 or 4 equally shaped planes")


@dataclass
class SignedDistanceField:
    """Euclidean distance to the mask boundary in voxel units.

    Negative strictly inside, positive strictly outside, zero exactly on
    boundary voxels (foreground voxels with a background 6-neighbour).
    """

    data: np.ndarray
    spacing: tuple


# ---------------------------------------------------------------------------
# file formats: VOL1 (custom binary) and MetaImage (.mhd + .raw)
# ---------------------------------------------------------------------------

_VOL1_MAGIC = b"VOL1"
_VOL1_DTYPES = {0: np.uint8, 1: np.float32}
_VOL1_CODES = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1}


def _save_vol1(path, data, spacing):
    nz, ny, nx = data.shape
    code = _VOL1_CODES.get(data.dtype)
    if code is None:
        raise VolumeFormatError(f"VOL1 cannot store dtype {data.dtype}")
    sx, sy, sz = spacing
    with open(path, "wb") as f:
        f.write(_VOL1_MAGIC)
        f.write(struct.pack("<3I", nx, ny, nz))
        f.write(struct.pack("<3f", sx, sy, sz))
        f.write(struct.pack("<B", code))
        f.write(np.ascontiguousarray(data).tobytes())


def _read_vol1(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _VOL1_MAGIC:
            raise VolumeFormatError(f"{path}: bad magic {magic!r}")
        header = f.read(12 + 12 + 1)
        if len(header) != 25:
            raise VolumeFormatError(f"{path}: truncated header")
        nx, ny, nz = struct.unpack("<3I", header[:12])
        sx, sy, sz = struct.unpack("<3f", header[12:24])
        code = header[24]
        if code not in _VOL1_DTYPES:
            raise VolumeFormatError(f"{path}: unsupported dtype code {code}")
        dtype = np.dtype(_VOL1_DTYPES[code]).newbyteorder("<")
        raw = f.read()
    expected = nx * ny * nz * dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{path}: data length {len(raw)} != dims product {expected}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(nz, ny, nx)
    return data.astype(_VOL1_DTYPES[code]), (sx, sy, sz)


_MHD_TYPES = {"MET_UCHAR": np.uint8, "MET_FLOAT": np.float32}
_MHD_NAMES = {np.dtype(np.uint8): "MET_UCHAR", np.dtype(np.float32): "MET_FLOAT"}


def _save_mhd(path, data, spacing):
    base = os.path.splitext(path)[0]
    raw_name = os.path.basename(base) + ".raw"
    elem_type = _MHD_NAMES.get(data.dtype)
    if elem_type is None:
        raise VolumeFormatError(f"MetaImage writer cannot store dtype {data.dtype}")
    nz, ny, nx = data.shape
    with open(path, "w") as f:
        f.write("NDims = 3\n")
        f.write(f"DimSize = {nx} {ny} {nz}\n")
        f.write(f"ElementSpacing = {spacing[0]} {spacing[1]} {spacing[2]}\n")
        f.write(f"ElementType = {elem_type}\n")
        f.write(f"ElementDataFile = {raw_name}\n")
    with open(base + ".raw", "wb") as f:
        f.write(np.ascontiguousarray(data).tobytes())


def _read_mhd(path):
    keys = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or "=" not in line:
                continue
            k, v = line.split("=", 1)
            keys[k.strip()] = v.strip()
    try:
        ndims = int(keys["NDims"])
        dim_size = [int(t) for t in keys["DimSize"].split()]
        spacing = tuple(float(t) for t in keys.get("ElementSpacing", "1 1 1").split())
        elem_type = keys["ElementType"]
        data_file = keys["ElementDataFile"]
    except (KeyError, ValueError) as e:
        raise VolumeFormatError(f"{path}: malformed MetaImage header ({e})") from e
    if ndims != 3 or len(dim_size) != 3 or len(spacing) != 3:
        raise VolumeFormatError(f"{path}: only 3D MetaImage supported")
    if elem_type not in _MHD_TYPES:
        raise VolumeFormatError(f"{path}: unsupported ElementType {elem_type}")
    dtype = np.dtype(_MHD_TYPES[elem_type]).newbyteorder("<")
    raw_path = os.path.join(os.path.dirname(path) or ".", data_file)
    with open(raw_path, "rb") as f:
        raw = f.read()
    nx, ny, nz = dim_size
    expected = nx * ny * nz * dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{raw_path}: data length {len(raw)} != DimSize product {expected}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(nz, ny, nx)
    return data.astype(_MHD_TYPES[elem_type]), spacing


def load_volume(path, as_kind="auto"):
    """Load a volume from a .vol (VOL1) or .mhd (MetaImage) file.

    as_kind selects the returned container: "auto" maps uint8 data to a
    normalized-8bit Volume3D and float data to an HU-float Volume3D;
    "mask" / "prob" / "hu" / "uint8" force the respective container.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mhd":
        data, spacing = _read_mhd(path)
    elif ext in (".vol", ".vol1", ".bin"):
        data, spacing = _read_vol1(path)
    else:
        raise VolumeFormatError(f"unsupported volume extension {ext!r}")
    if as_kind == "auto":
        kind = NORMALIZED_8BIT if data.dtype == np.uint8 else HU_FLOAT
        return Volume3D(data, spacing, kind)
    if as_kind == "mask":
        return Mask3D(data.astype(np.uint8), spacing)
    if as_kind == "prob":
        return ProbMap3D(data.astype(np.float32), spacing)
    if as_kind in (HU_FLOAT, "hu"):
        return Volume3D(data.astype(np.float32), spacing, HU_FLOAT)
    if as_kind in (NORMALIZED_8BIT, "uint8"):
        return Volume3D(data, spacing, NORMALIZED_8BIT)
    raise ValueError(f"unknown as_kind {as_kind!r}")


def save_volume(v, path):
    """Inverse of load_volume; format chosen by extension."""
    data = v.data
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mhd":
        _save_mhd(path, data, v.spacing)
    elif ext in (".vol", ".vol1", ".bin"):
        _save_vol1(path, data, v.spacing)
    else:
        raise VolumeFormatError(f"unsupported volume extension {ext!r}")


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def clip_rescale_hu(v: Volume3D) -> Volume3D:
    """Clamp HU to [-100, 400] and rescale linearly to 8-bit [0, 255]."""
    if v.value_kind != HU_FLOAT:
        raise ValueError("clip_rescale_hu expects an HU-float volume")
    x = np.clip(v.data.astype(np.float64), HU_CLIP_LO, HU_CLIP_HI)
    scaled = 255.0 * (x - HU_CLIP_LO) / (HU_CLIP_HI - HU_CLIP_LO)
    out = np.floor(scaled + 0.5).astype(np.uint8)  # round half up
    return Volume3D(out, v.spacing, NORMALIZED_8BIT)


def resample_isotropic(v: Volume3D, target_spacing: float) -> Volume3D:
    """Trilinear resample to isotropic spacing.

    New dims are round(old_dims * old_spacing / target); voxel centres sit at
    index*spacing with clamped borders.
    """
    if target_spacing <= 0:
        raise ValueError("target_spacing must be positive")
    nx, ny, nz = v.dims
    sx, sy, sz = v.spacing
    new_dims = [int(round(nx * sx / target_spacing)),
                int(round(ny * sy / target_spacing)),
                int(round(nz * sz / target_spacing))]
    if min(new_dims) < 1:
        raise ValueError(
            f"target spacing {target_spacing} collapses dims {v.dims} to {new_dims}"
        )
    if tuple(new_dims) == (nx, ny, nz) and all(
        s == target_spacing for s in v.spacing
    ):
        return Volume3D(v.data.copy(), v.spacing, v.value_kind)
    mx, my, mz = new_dims
    zc = np.arange(mz) * (target_spacing / sz)
    yc = np.arange(my) * (target_spacing / sy)
    xc = np.arange(mx) * (target_spacing / sx)
    grid = np.meshgrid(zc, yc, xc, indexing="ij")
    out = ndimage.map_coordinates(
        v.data.astype(np.float64), grid, order=1, mode="nearest"
    )
    if v.value_kind == NORMALIZED_8BIT:
        out = np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    else:
        out = out.astype(np.float32)
    return Volume3D(out, (target_spacing,) * 3, v.value_kind)


def extract_slice_stack(v: Volume3D, z: int, liver_prior: ProbMap3D = None) -> SliceStack:
    """Three-slice axial stack [z-1, z, z+1] with edge replication.

    When a liver prior is given its slice z is appended as a fourth channel.
    """
    nz = v.data.shape[0]
    if not 0 <= z < nz:
        raise IndexError(f"slice index {z} out of range [0, {nz})")
    zm = max(z - 1, 0)
    zp = min(z + 1, nz - 1)
    planes = [v.data[zm], v.data[z], v.data[zp]]
    if liver_prior is not None:
        require_same_grid(v, liver_prior, "volume and liver prior")
        planes.append(liver_prior.data[z])
    return SliceStack(np.stack([p.astype(np.float32) for p in planes]), z)


# ---------------------------------------------------------------------------
# connected components
# ---------------------------------------------------------------------------


@dataclass
class Component:
    """One connected foreground component."""

    label: int
    size: int
    bbox_min: tuple  # (z0, y0, x0) inclusive
    bbox_max: tuple  # (z1, y1, x1) inclusive
    coords_zyx: np.ndarray = field(repr=False)  # (size, 3) int32


_STRUCTS = {
    6: ndimage.generate_binary_structure(3, 1),
    26: ndimage.generate_binary_structure(3, 3),
    "in-plane-8": np.array(
        [np.zeros((3, 3)), np.ones((3, 3)), np.zeros((3, 3))], dtype=bool
    ),
}


def connected_components(m: Mask3D, connectivity=26):
    """Label foreground; labels 1..K assigned in raster order of the first
    encountered voxel of each component (x-fastest raster).

    connectivity: 6, 26, or "in-plane-8" (per-slice 8-connectivity, no z links).
    Returns (labels int32 array, [Component]).
    """
    if connectivity not in _STRUCTS:
        raise ValueError(f"connectivity must be one of {list(_STRUCTS)}")
    raw, k = ndimage.label(m.data, structure=_STRUCTS[connectivity])
    labels = np.zeros_like(raw, dtype=np.int32)
    comps = []
    if k > 0:
        flat = raw.ravel()
        fg = np.flatnonzero(flat)
        # renumber by first raster occurrence so labeling is deterministic
        uniq, first = np.unique(flat[fg], return_index=True)
        order = np.argsort(first, kind="stable")
        remap = np.zeros(k + 1, dtype=np.int32)
        remap[uniq[order]] = np.arange(1, k + 1, dtype=np.int32)
        labels = remap[raw]
        lab_fg = labels.ravel()[fg]
        sort_idx = np.argsort(lab_fg, kind="stable")
        sorted_flat = fg[sort_idx]
        counts = np.bincount(lab_fg, minlength=k + 1)[1:]
        zz, yy, xx = np.unravel_index(sorted_flat, m.data.shape)
        coords_all = np.stack([zz, yy, xx], axis=1).astype(np.int32)
        start = 0
        for lab in range(1, k + 1):
            n = int(counts[lab - 1])
            coords = coords_all[start: start + n]
            start += n
            comps.append(
                Component(
                    label=lab,
                    size=n,
                    bbox_min=tuple(int(c) for c in coords.min(axis=0)),
                    bbox_max=tuple(int(c) for c in coords.max(axis=0)),
                    coords_zyx=coords,
                )
            )
    return labels, comps


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (squared, integer) and signed EDT
# ---------------------------------------------------------------------------

_INF = np.float64(1e30)


def _axis_dist_to_seed(seed2d):
    """Per-row distance (in steps) to the nearest True along the last axis.

    Rows without any seed get _INF.
    """
    n = seed2d.shape[-1]
    idx = np.arange(n, dtype=np.float64)
    pos = np.where(seed2d, idx, -_INF)
    prev = np.maximum.accumulate(pos, axis=-1)
    d_prev = idx - prev
    pos = np.where(seed2d, idx, _INF)
    nxt = np.minimum.accumulate(pos[..., ::-1], axis=-1)[..., ::-1]
    d_next = nxt - idx
    return np.minimum(d_prev, d_next)


def _axis_pass_sq(f, chunk=256):
    """g(q) = min_v ((q - v)^2 + f(v)) along the last axis, all rows at once.

    Direct minimization over candidate centres; exact in integer arithmetic
    since all quantities stay below 2^53.
    """
    rows, n = f.shape
    q = np.arange(n, dtype=np.float64)
    sq = (q[:, None] - q[None, :]) ** 2  # (q, v)
    out = np.empty_like(f)
    for lo in range(0, rows, chunk):
        hi = min(lo + chunk, rows)
        # (rows, 1, v) + (q, v) -> min over v
        out[lo:hi] = (f[lo:hi, None, :] + sq[None, :, :]).min(axis=2)
    return out


def edt_sq(seed: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (voxel units) to the nearest True voxel.

    Voxels with no seed anywhere map to +inf.  Values are exact integers
    (returned as float64 to carry the inf sentinel).
    """
    if not seed.any():
        return np.full(seed.shape, np.inf)
    # pass 1 along x: pure 1D distance to the nearest seed in the row
    d = _axis_dist_to_seed(seed)
    d = np.where(d >= _INF / 2, _INF, d * d)
    # passes 2 and 3: parabola minimization along y then z
    for axis in (1, 0):
        d = np.moveaxis(d, axis, -1)
        shape = d.shape
        d = _axis_pass_sq(np.ascontiguousarray(d.reshape(-1, shape[-1])))
        d = np.moveaxis(d.reshape(shape), -1, axis)
    out = d
    out[out >= _INF / 2] = np.inf
    finite = np.isfinite(out)
    out[finite] = np.round(out[finite])
    return out


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with >= 1 background 6-neighbour (outside grid counts
    as background)."""
    fg = mask.astype(bool)
    eroded = ndimage.binary_erosion(fg, structure=_STRUCTS[6], border_value=0)
    return fg & ~eroded


def signed_edt(m: Mask3D) -> SignedDistanceField:
    """Signed exact EDT in voxel units; spacing anisotropy deliberately ignored.

    Outside voxels carry +distance to the nearest foreground voxel, inside
    voxels -distance to the nearest boundary voxel, boundary voxels 0.
    An all-background mask maps to +inf everywhere.
    """
    fg = m.data.astype(bool)
    if not fg.any():
        return SignedDistanceField(np.full(fg.shape, np.inf), m.spacing)
    bnd = boundary_voxels(fg)
    d_out_sq = edt_sq(fg)
    d_in_sq = edt_sq(bnd)
    out = np.where(fg, -np.sqrt(d_in_sq), np.sqrt(d_out_sq))
    out[bnd] = 0.0
    return SignedDistanceField(out, m.spacing)
