"""Probability-map to binary-mask conversion and cleanup.

Otsu adaptive thresholding on 8-bit rescaled maps, per-slice morphological
open (3x3 erosion then dilation), and the three-slice consistency rule that
restores voxels supported by both axial neighbours.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volumes import Mask3D, ProbMap3D, require_same_grid


class DegenerateHistogramError(ValueError):
    """Histogram has mass in fewer than two distinct levels."""


@dataclass
class Histogram256:
    """256-level gray histogram; counts may be raw or normalized to sum 1."""

    counts: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (256,):
            raise ValueError("histogram must have exactly 256 bins")
        if (self.counts < 0).any():
            raise ValueError("histogram counts must be non-negative")
        if self.normalized and abs(self.counts.sum() - 1.0) > 1e-12:
            raise ValueError("normalized histogram must sum to 1")

    def normalize(self) -> "Histogram256":
        total = self.counts.sum()
        if total <= 0:
            raise DegenerateHistogramError("empty histogram")
        return Histogram256(self.counts / total, normalized=True)

    @classmethod
    def from_levels(cls, levels: np.ndarray) -> "Histogram256":
        counts = np.bincount(levels.ravel().astype(np.int64), minlength=256)
        return cls(counts.astype(np.float64))


@dataclass
class OtsuResult:
    tau_star: int        # threshold in [0, 254]; level > tau_star is foreground
    omega0: float
    omega1: float
    mu0: float
    mu1: float
    variance: float      # between-class variance at tau_star


def _otsu_argmax_exact(counts):
    """Exact integer argmax of the between-class variance.

    With integral counts, var(tau) = (S0*W1 - S1*W0)^2 / (N^2 * W0 * W1);
    comparing A_i * B_j > A_j * B_i in arbitrary-precision integers avoids
    any floating-point tie ambiguity.
    """
    c = [int(v) for v in counts]
    total_w = sum(c)
    total_s = sum(k * v for k, v in enumerate(c))
    w0 = 0
    s0 = 0
    best_tau = None
    best_a = 0  # numerator (S0*W1 - S1*W0)^2
    best_b = 1  # denominator W0*W1
    for tau in range(255):
        w0 += c[tau]
        s0 += tau * c[tau]
        w1 = total_w - w0
        if w0 == 0 or w1 == 0:
            a, b = 0, 1
        else:
            s1 = total_s - s0
            a = (s0 * w1 - s1 * w0) ** 2
            b = w0 * w1
        if best_tau is None or a * best_b > best_a * b:
            best_tau, best_a, best_b = tau, a, b
    return best_tau


def otsu_threshold(h: Histogram256) -> OtsuResult:
    """Threshold maximizing omega0*omega1*(mu0-mu1)^2, ties to smallest tau.

    Candidate taus run over [0, 254]; a class with zero mass contributes
    variance 0.  Integral-count histograms are maximized in exact integer
    arithmetic, so ties always break toward the smaller tau.  Raises
    DegenerateHistogramError when fewer than two levels carry mass.
    """
    raw = h.counts if not h.normalized else h.counts
    if np.count_nonzero(raw) < 2 or raw.sum() <= 0:
        raise DegenerateHistogramError("histogram needs >= 2 occupied levels")
    p = h.counts if h.normalized else h.normalize().counts
    k = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(p)[:255]                 # omega0(tau), tau = 0..254
    m0 = np.cumsum(p * k)[:255]             # unnormalized class-0 mean mass
    w1 = 1.0 - w0
    mu_total = float((p * k).sum())
    m1 = mu_total - m0
    var = np.zeros(255)
    ok = (w0 > 0) & (w1 > 0)
    mu0 = np.where(ok, m0 / np.where(w0 > 0, w0, 1.0), 0.0)
    mu1 = np.where(ok, m1 / np.where(w1 > 0, w1, 1.0), 0.0)
    var[ok] = (w0 * w1 * (mu0 - mu1) ** 2)[ok]
    integral = not h.normalized and np.array_equal(raw, np.round(raw))
    if integral:
        tau = _otsu_argmax_exact(raw)
    else:
        tau = int(np.argmax(var))  # first (smallest) maximizer
    return OtsuResult(
        tau_star=tau,
        omega0=float(w0[tau]),
        omega1=float(w1[tau]),
        mu0=float(mu0[tau]),
        mu1=float(mu1[tau]),
        variance=float(var[tau]),
    )


def prob_to_levels(p: ProbMap3D) -> np.ndarray:
    """Scale [0,1] probabilities to rounded 8-bit levels."""
    return np.floor(p.data.astype(np.float64) * 255.0 + 0.5).astype(np.int64)


def binarize(p: ProbMap3D, mode="otsu", fixed_tau: int = None) -> Mask3D:
    """Threshold a probability map into a binary mask.

    mode "otsu": per-volume Otsu on the 8-bit rescaled histogram.
    mode "fixed": threshold at fixed_tau.  Foreground is strictly
    level > tau.
    """
    levels = prob_to_levels(p)
    if mode == "otsu":
        tau = otsu_threshold(Histogram256.from_levels(levels)).tau_star
    elif mode == "fixed":
        if fixed_tau is None:
            raise ValueError("fixed mode needs fixed_tau")
        tau = int(fixed_tau)
    else:
        raise ValueError(f"unknown binarize mode {mode!r}")
    return Mask3D((levels > tau).astype(np.uint8), p.spacing)


_SQUARE3 = np.ones((1, 3, 3), dtype=bool)  # in-plane 3x3 structuring element


def morph_smooth(m: Mask3D) -> Mask3D:
    """Per-axial-slice 3x3 erosion followed by 3x3 dilation.

    Out-of-bounds voxels count as background for the erosion, so components
    that contain no full 3x3 square vanish entirely.
    """
    fg = m.data.astype(bool)
    eroded = ndimage.binary_erosion(fg, structure=_SQUARE3, border_value=0)
    opened = ndimage.binary_dilation(eroded, structure=_SQUARE3, border_value=0)
    return Mask3D(opened.astype(np.uint8), m.spacing)


def temporal_refine(
    y: Mask3D, p: ProbMap3D, restore_thresh: float = 0.6, suppress_isolated: bool = False
) -> Mask3D:
    """Three-slice consistency refinement along z.

    A background voxel turns foreground when both axial neighbours are
    foreground and their mean pre-threshold probability exceeds
    restore_thresh.  Boundary slices pass through unchanged.  With
    suppress_isolated, foreground voxels lacking support in both neighbour
    slices are cleared.
    """
    require_same_grid(y, p, "mask and probability map")
    cur = y.data.astype(bool)
    out = cur.copy()
    if cur.shape[0] >= 3:
        below = cur[:-2]
        above = cur[2:]
        mid = cur[1:-1]
        mean_p = (p.data[:-2].astype(np.float64) + p.data[2:].astype(np.float64)) / 2.0
        restore = (~mid) & below & above & (mean_p > restore_thresh)
        out[1:-1] |= restore
        if suppress_isolated:
            out[1:-1] &= ~(mid & ~below & ~above)
    return Mask3D(out.astype(np.uint8), y.spacing)
