"""Single-level orthonormal 3D Haar analysis/synthesis.

Pairwise (a+b)/sqrt(2), (a-b)/sqrt(2) along z, then y, then x.  Odd axes are
padded to even length by edge replication before analysis, so perfect
reconstruction holds exactly for even input dims and Parseval's identity
holds against the padded input.
"""

import numpy as np

_SQRT2 = np.sqrt(2.0)

# band letter order is (z, y, x); L first, binary order with z most significant
BAND_NAMES = ("LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH")


def _pad_even(x):
    pads = []
    for n in x.shape:
        pads.append((0, n % 2))
    if any(p[1] for p in pads):
        x = np.pad(x, pads, mode="edge")
    return x


def _analyze_axis(x, axis):
    x = np.moveaxis(x, axis, -1)
    a = x[..., 0::2]
    b = x[..., 1::2]
    lo = (a + b) / _SQRT2
    hi = (a - b) / _SQRT2
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesize_axis(lo, hi, axis):
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    n = lo.shape[-1]
    out = np.empty(lo.shape[:-1] + (2 * n,), dtype=np.float64)
    out[..., 0::2] = (lo + hi) / _SQRT2
    out[..., 1::2] = (lo - hi) / _SQRT2
    return np.moveaxis(out, -1, axis)


def haar3d(volume: np.ndarray) -> dict:
    """Decompose into the eight sub-bands keyed LLL..HHH.

    Band letters follow axis order (z, y, x); each sub-band has half the
    (padded) extent per axis.
    """
    x = _pad_even(np.asarray(volume, dtype=np.float64))
    parts = {"": x}
    for axis in range(3):
        nxt = {}
        for code, arr in parts.items():
            lo, hi = _analyze_axis(arr, axis)
            nxt[code + "L"] = lo
            nxt[code + "H"] = hi
        parts = nxt
    return {name: parts[name] for name in BAND_NAMES}


def ihaar3d(bands: dict) -> np.ndarray:
    """Inverse of haar3d (up to the even-padding of odd inputs)."""
    parts = dict(bands)
    for axis in (2, 1, 0):
        nxt = {}
        prefixes = {c[:axis] for c in parts}
        for code in sorted(prefixes):
            nxt[code] = _synthesize_axis(parts[code + "L"], parts[code + "H"], axis)
        parts = nxt
    return parts[""]
