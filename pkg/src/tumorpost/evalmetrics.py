"""Volume-level segmentation metrics, size stratification and Wilcoxon test."""

import csv
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .volumes import Mask3D, require_same_grid


@dataclass
class MetricsRow:
    case_id: str
    sensitivity: float
    ppv: float
    dice: float
    n_pred: int
    n_true: int
    n_intersection: int


@dataclass
class MetricsReport:
    rows: list

    def summary(self):
        """Unweighted mean +- sample std across cases."""
        out = {}
        for key in ("sensitivity", "ppv", "dice"):
            vals = np.array([getattr(r, key) for r in self.rows], dtype=np.float64)
            out[key] = (
                float(vals.mean()) if vals.size else float("nan"),
                float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            )
        return out

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([
                "case_id", "sensitivity", "ppv", "dice",
                "n_pred", "n_true", "n_intersection",
            ])
            for r in self.rows:
                writer.writerow([
                    r.case_id, repr(r.sensitivity), repr(r.ppv), repr(r.dice),
                    r.n_pred, r.n_true, r.n_intersection,
                ])
            s = self.summary()
            writer.writerow([
                "summary_mean", repr(s["sensitivity"][0]), repr(s["ppv"][0]),
                repr(s["dice"][0]), "", "", "",
            ])
            writer.writerow([
                "summary_std", repr(s["sensitivity"][1]), repr(s["ppv"][1]),
                repr(s["dice"][1]), "", "", "",
            ])

    def save_json(self, path):
        payload = {
            "rows": [asdict(r) for r in self.rows],
            "summary": {
                k: {"mean": v[0], "std": v[1]} for k, v in self.summary().items()
            },
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1)


def compute_metrics(pred: Mask3D, true: Mask3D, case_id="case") -> MetricsRow:
    """Set-count sensitivity / PPV / Dice.

    Empty-set conventions: an empty denominator scores 1 when the other set
    is also empty (nothing to find, nothing claimed) and 0 otherwise; both
    masks empty gives Dice 1.
    """
    require_same_grid(pred, true, "prediction and ground truth")
    p = pred.data.astype(bool)
    t = true.data.astype(bool)
    n_p = int(p.sum())
    n_t = int(t.sum())
    n_i = int((p & t).sum())
    if n_t == 0:
        sens = 1.0 if n_p == 0 else 0.0
    else:
        sens = n_i / n_t
    if n_p == 0:
        ppv = 1.0 if n_t == 0 else 0.0
    else:
        ppv = n_i / n_p
    if n_p + n_t == 0:
        dice = 1.0
    else:
        dice = 2.0 * n_i / (n_p + n_t)
    return MetricsRow(case_id, sens, ppv, dice, n_p, n_t, n_i)


SIZE_STRATA = ("small", "medium", "large")  # <10 mm, 10-30 mm, >30 mm


def equivalent_spherical_diameter(n_voxels, spacing):
    vol_mm3 = n_voxels * spacing[0] * spacing[1] * spacing[2]
    return (6.0 * vol_mm3 / math.pi) ** (1.0 / 3.0)


def size_stratum(diameter_mm):
    """Stratum for one equivalent spherical diameter; the 10 mm and 30 mm
    boundaries are inclusive to 'medium'."""
    if diameter_mm < 10.0:
        return "small"
    if diameter_mm <= 30.0:
        return "medium"
    return "large"


def stratify_by_size(components, spacing):
    """Stratum per component by equivalent spherical diameter."""
    return [
        size_stratum(equivalent_spherical_diameter(comp.size, spacing))
        for comp in components
    ]


def wilcoxon_signed_rank(diffs, exact_limit=25):
    """Paired Wilcoxon signed-rank test; returns (w_plus, two-sided p).

    Zero differences are dropped; ties get mid-ranks.  The null distribution
    is enumerated exactly (tie-aware) up to exact_limit nonzero differences,
    beyond that a normal approximation with tie correction is used.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    if n < 5:
        raise ValueError("need >= 5 nonzero differences")
    order = np.argsort(np.abs(d), kind="stable")
    ranks = np.empty(n)
    abs_sorted = np.abs(d)[order]
    i = 0
    pos = 1.0
    while i < n:
        j = i
        while j + 1 < n and abs_sorted[j + 1] == abs_sorted[i]:
            j += 1
        ranks[order[i:j + 1]] = (pos + (pos + (j - i))) / 2.0
        pos += j - i + 1
        i = j + 1
    w_plus = float(ranks[d > 0].sum())
    if n <= exact_limit:
        p = _exact_two_sided_p(ranks, w_plus)
    else:
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(np.abs(d), return_counts=True)
        tie_term = float((counts ** 3 - counts).sum()) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        z = (w_plus - mean) / math.sqrt(var)
        p = float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))
    return w_plus, p


def _exact_two_sided_p(ranks, w_plus):
    """Exact tie-aware null: W+ sums a uniformly random subset of the ranks."""
    scaled = np.round(ranks * 2).astype(np.int64)  # mid-ranks -> integers
    total = int(scaled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in scaled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    probs = counts / counts.sum()
    w2 = int(round(w_plus * 2))
    lower = probs[: w2 + 1].sum()
    upper = probs[w2:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))
