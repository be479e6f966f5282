import itertools

import numpy as np
import pytest

from tumorpost.evalmetrics import (
    MetricsReport,
    compute_metrics,
    equivalent_spherical_diameter,
    stratify_by_size,
    wilcoxon_signed_rank,
)
from tumorpost.volumes import Component, GridMismatchError, Mask3D


def mask_of(flat_bits, shape=(2, 2, 2)):
    return Mask3D(np.array(flat_bits, dtype=np.uint8).reshape(shape), (1, 1, 1))


class TestComputeMetrics:
    def test_perfect_prediction(self):
        m = mask_of([1, 0, 1, 0, 1, 0, 1, 0])
        row = compute_metrics(m, m)
        assert (row.sensitivity, row.ppv, row.dice) == (1.0, 1.0, 1.0)

    def test_disjoint_sets(self):
        p = mask_of([1, 1, 0, 0, 0, 0, 0, 0])
        t = mask_of([0, 0, 0, 0, 0, 0, 1, 1])
        row = compute_metrics(p, t)
        assert (row.sensitivity, row.ppv, row.dice) == (0.0, 0.0, 0.0)

    def test_half_overlap_counts(self):
        shape = (2, 10, 10)
        p = np.zeros(shape, dtype=np.uint8)
        t = np.zeros(shape, dtype=np.uint8)
        p[0] = 1          # 100 voxels
        t[0, :, :5] = 1   # overlap 50
        t[1, :, :5] = 1   # 100 total
        row = compute_metrics(Mask3D(p, (1, 1, 1)), Mask3D(t, (1, 1, 1)))
        assert row.dice == 0.5
        assert row.sensitivity == 0.5
        assert row.ppv == 0.5

    def test_empty_set_conventions(self):
        empty = mask_of([0] * 8)
        full = mask_of([1] * 8)
        both = compute_metrics(empty, empty)
        assert (both.sensitivity, both.ppv, both.dice) == (1.0, 1.0, 1.0)
        miss = compute_metrics(empty, full)
        assert (miss.sensitivity, miss.ppv, miss.dice) == (0.0, 0.0, 0.0)
        fp = compute_metrics(full, empty)
        assert fp.sensitivity == 0.0
        assert fp.ppv == 0.0

    def test_duality(self):
        gen = np.random.default_rng(0)
        for _ in range(20):
            p = Mask3D((gen.random((3, 4, 4)) > 0.5).astype(np.uint8), (1, 1, 1))
            t = Mask3D((gen.random((3, 4, 4)) > 0.5).astype(np.uint8), (1, 1, 1))
            ab = compute_metrics(p, t)
            ba = compute_metrics(t, p)
            assert ab.dice == ba.dice
            assert ab.sensitivity == ba.ppv
            assert ab.ppv == ba.sensitivity

    def test_permutation_invariance(self):
        gen = np.random.default_rng(1)
        p = (gen.random(27) > 0.5).astype(np.uint8)
        t = (gen.random(27) > 0.5).astype(np.uint8)
        perm = gen.permutation(27)
        a = compute_metrics(mask_of(p, (3, 3, 3)), mask_of(t, (3, 3, 3)))
        b = compute_metrics(mask_of(p[perm], (3, 3, 3)), mask_of(t[perm], (3, 3, 3)))
        assert a.dice == b.dice

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            compute_metrics(mask_of([0] * 8), mask_of([0] * 12, (3, 2, 2)))

    def test_report_summary_and_io(self, tmp_path):
        rows = [
            compute_metrics(mask_of([1] * 8), mask_of([1] * 8), "a"),
            compute_metrics(mask_of([1, 0] * 4), mask_of([0, 1] * 4), "b"),
        ]
        report = MetricsReport(rows)
        s = report.summary()
        assert s["dice"][0] == pytest.approx(0.5)
        report.save_csv(tmp_path / "r.csv")
        report.save_json(tmp_path / "r.json")
        assert (tmp_path / "r.csv").read_text().startswith("case_id,")


def component_of_size(n):
    coords = np.zeros((n, 3), dtype=np.int32)
    coords[:, 2] = np.arange(n)
    return Component(1, n, (0, 0, 0), (0, 0, n - 1), coords)


class TestStratify:
    def test_closed_form_boundary(self):
        # a component whose volume is exactly pi*10^3/6 mm^3 has d = 10
        n = int(round(np.pi * 1000 / 6))
        d = equivalent_spherical_diameter(n, (1, 1, 1))
        assert d == pytest.approx(10.0, abs=2e-3)
        assert stratify_by_size([component_of_size(n)], (1, 1, 1)) == ["medium"]

    def test_single_voxel_small(self):
        assert stratify_by_size([component_of_size(1)], (1, 1, 1)) == ["small"]

    def test_d30_boundary_inclusive_medium(self):
        n = int(round(np.pi * 30 ** 3 / 6))
        assert stratify_by_size([component_of_size(n)], (1, 1, 1)) == ["medium"]
        assert stratify_by_size([component_of_size(n + 50)], (1, 1, 1)) == ["large"]

    def test_spacing_scales_volume(self):
        # 10 voxels at 2 mm isotropic = 80 mm^3 -> d ~ 5.3 -> small
        assert stratify_by_size([component_of_size(10)], (2, 2, 2)) == ["small"]
        # but 3000 of them -> 24000 mm^3 -> d ~ 35.8 -> large
        assert stratify_by_size([component_of_size(3000)], (2, 2, 2)) == ["large"]


def brute_force_wilcoxon(diffs):
    """Enumerate all 2^n sign assignments of |d| with mid-ranks."""
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = d.size
    a = np.abs(d)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(n)
    i = 0
    srt = a[order]
    while i < n:
        j = i
        while j + 1 < n and srt[j + 1] == srt[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    w_obs = ranks[d > 0].sum()
    ws = []
    for signs in itertools.product([0, 1], repeat=n):
        ws.append(sum(r for s, r in zip(signs, ranks) if s))
    ws = np.array(ws)
    lower = (ws <= w_obs + 1e-9).mean()
    upper = (ws >= w_obs - 1e-9).mean()
    return w_obs, min(1.0, 2.0 * min(lower, upper))


class TestWilcoxon:
    def test_all_positive_n6(self):
        w, p = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6])
        assert w == 21.0
        assert p == pytest.approx(2 / 64)

    def test_symmetric_pairs_center(self):
        w, p = wilcoxon_signed_rank([1, -1, 2, -2, 3, -3])
        assert w == pytest.approx(10.5)
        assert p == pytest.approx(1.0)

    def test_exact_matches_enumeration(self):
        gen = np.random.default_rng(2)
        for n in range(5, 13):
            for _ in range(6):
                diffs = np.round(gen.normal(size=n) * 4) / 2.0
                diffs = diffs[diffs != 0]
                if diffs.size < 5:
                    continue
                w_got, p_got = wilcoxon_signed_rank(diffs)
                w_want, p_want = brute_force_wilcoxon(diffs)
                assert w_got == pytest.approx(w_want)
                assert p_got == pytest.approx(p_want, abs=1e-12)

    def test_zero_diffs_dropped(self):
        w_a, p_a = wilcoxon_signed_rank([1, 2, 3, 4, 5, 0, 0])
        w_b, p_b = wilcoxon_signed_rank([1, 2, 3, 4, 5])
        assert (w_a, p_a) == (w_b, p_b)

    def test_too_few_nonzero(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1, -1, 0, 0, 0, 0])

    def test_normal_approximation_large_n(self):
        gen = np.random.default_rng(3)
        diffs = gen.normal(0.8, 1.0, size=60)
        diffs = diffs[diffs != 0]
        w, p = wilcoxon_signed_rank(diffs)
        assert 0.0 <= p <= 1.0
        assert p < 0.01  # strongly shifted sample

    def test_exact_limit_boundary(self):
        gen = np.random.default_rng(4)
        diffs = gen.integers(1, 10, size=25).astype(float)
        w, p = wilcoxon_signed_rank(diffs)  # n = 25 still exact
        assert 0.0 < p <= 1.0
