import numpy as np
import pytest

from tumorpost.radiomics import (
    CandidateRegion,
    SamplerConfig,
    extract_positive_regions,
    sample_negative_regions,
    sampler_quotas,
)
from tumorpost.volumes import HU_FLOAT, Mask3D, Volume3D, connected_components


def ellipsoid_mask(shape, center, radii):
    zz, yy, xx = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    return (
        ((zz - center[0]) / radii[0]) ** 2
        + ((yy - center[1]) / radii[1]) ** 2
        + ((xx - center[2]) / radii[2]) ** 2
    ) <= 1.0


@pytest.fixture(scope="module")
def liver_scene():
    shape = (40, 56, 56)
    liver = ellipsoid_mask(shape, (20, 28, 28), (14, 22, 22))
    ct = Volume3D(np.full(shape, 60.0, dtype=np.float32), (1, 1, 1), HU_FLOAT)
    return ct, Mask3D(liver.astype(np.uint8), (1, 1, 1)), Mask3D(
        np.zeros(shape, dtype=np.uint8), (1, 1, 1)
    )


class TestPositiveRegions:
    def test_empty_mask(self):
        m = Mask3D(np.zeros((5, 5, 5), dtype=np.uint8), (1, 1, 1))
        assert extract_positive_regions(m) == []

    def test_two_balls(self):
        shape = (20, 20, 20)
        m = ellipsoid_mask(shape, (5, 5, 5), (3, 3, 3)) | ellipsoid_mask(
            shape, (14, 14, 14), (3, 3, 3)
        )
        regions = extract_positive_regions(Mask3D(m.astype(np.uint8), (1, 1, 1)))
        assert len(regions) == 2
        assert all(r.label == "positive" for r in regions)

    def test_sizes_match_components(self):
        gen = np.random.default_rng(0)
        m = (gen.random((10, 10, 10)) > 0.7).astype(np.uint8)
        mask = Mask3D(m, (1, 1, 1))
        regions = extract_positive_regions(mask)
        _, comps = connected_components(mask, 26)
        assert sorted(r.size for r in regions) == sorted(c.size for c in comps)


class TestQuotas:
    def test_default_quota_1000(self):
        radii, quotas = sampler_quotas(SamplerConfig())
        assert len(radii) == 24
        assert radii[0] == 2 and radii[-1] == 48
        total = sum(b + i for b, i in quotas)
        assert total == 1000
        per_radius = [b + i for b, i in quotas]
        assert set(per_radius) == {41, 42}
        assert sum(b for b, _ in quotas) == 600  # round(0.6 * 1000)

    def test_quota_48_boundary_split(self):
        cfg = SamplerConfig(quota_total=48)
        radii, quotas = sampler_quotas(cfg)
        per_radius = [b + i for b, i in quotas]
        assert per_radius == [2] * 24
        assert sum(b for b, _ in quotas) == 29  # round(0.6 * 48)
        assert sum(i for _, i in quotas) == 19


class TestNegativeSampler:
    def test_tumor_free_quota_48(self, liver_scene):
        ct, liver, tumor = liver_scene
        cfg = SamplerConfig(quota_total=48, r_max=12, r_step=2, seed=5)
        # radius grid shrinks to 6 entries; quотas follow the same rule
        radii, quotas = sampler_quotas(cfg)
        regions, warn_records = sample_negative_regions(ct, liver, tumor, cfg)
        assert warn_records == []
        assert len(regions) == 48
        by_kind = {"boundary": 0, "interior": 0}
        for r in regions:
            kind = r.region_id.split("-")[2]
            by_kind[kind] += 1
        assert by_kind["boundary"] == sum(b for b, _ in quotas)
        assert by_kind["interior"] == sum(i for _, i in quotas)

    def test_rejection_near_edge(self, liver_scene):
        ct, liver, tumor = liver_scene
        # every sampled region must satisfy the outside-liver bound
        cfg = SamplerConfig(quota_total=24, r_max=8, seed=1)
        regions, _ = sample_negative_regions(ct, liver, tumor, cfg)
        fg = liver.data.astype(bool)
        for r in regions:
            radius = int(r.region_id.split("-")[1][1:])
            g = np.arange(-radius, radius + 1)
            zz, yy, xx = np.meshgrid(g, g, g, indexing="ij")
            n_sphere = int((zz ** 2 + yy ** 2 + xx ** 2 <= radius ** 2).sum())
            inside = fg[tuple(r.coords_zyx.T)].sum()
            assert 1.0 - inside / n_sphere <= 0.20 + 1e-12

    def test_tumor_fraction_rejection(self):
        shape = (30, 40, 40)
        liver = ellipsoid_mask(shape, (15, 20, 20), (11, 16, 16))
        tumor = ellipsoid_mask(shape, (15, 20, 20), (6, 6, 6))
        ct = Volume3D(np.full(shape, 60.0, dtype=np.float32), (1, 1, 1), HU_FLOAT)
        cfg = SamplerConfig(quota_total=24, r_max=6, seed=2)
        regions, _ = sample_negative_regions(
            ct, Mask3D(liver.astype(np.uint8), (1, 1, 1)),
            Mask3D(tumor.astype(np.uint8), (1, 1, 1)), cfg,
        )
        tum = tumor
        for r in regions:
            radius = int(r.region_id.split("-")[1][1:])
            g = np.arange(-radius, radius + 1)
            zz, yy, xx = np.meshgrid(g, g, g, indexing="ij")
            n_sphere = int((zz ** 2 + yy ** 2 + xx ** 2 <= radius ** 2).sum())
            frac_tumor = tum[tuple(r.coords_zyx.T)].sum() / n_sphere
            assert frac_tumor <= 0.10 + 1e-12

    def test_seed_determinism(self, liver_scene):
        ct, liver, tumor = liver_scene
        cfg = SamplerConfig(quota_total=24, r_max=8, seed=7)
        a, _ = sample_negative_regions(ct, liver, tumor, cfg)
        b, _ = sample_negative_regions(ct, liver, tumor, cfg)
        assert len(a) == len(b)
        for ra, rb in zip(a, b):
            assert ra.region_id == rb.region_id
            assert np.array_equal(ra.coords_zyx, rb.coords_zyx)

    def test_too_small_liver_warns_not_fails(self):
        shape = (12, 12, 12)
        liver = np.zeros(shape, dtype=np.uint8)
        liver[5:8, 5:8, 5:8] = 1
        ct = Volume3D(np.full(shape, 60.0, dtype=np.float32), (1, 1, 1), HU_FLOAT)
        tumor = Mask3D(np.zeros(shape, dtype=np.uint8), (1, 1, 1))
        cfg = SamplerConfig(quota_total=12, r_min=8, r_max=10, seed=0)
        with pytest.warns(UserWarning):
            regions, warn_records = sample_negative_regions(
                ct, Mask3D(liver, (1, 1, 1)), tumor, cfg
            )
        assert len(warn_records) > 0
        assert len(regions) + len(warn_records) == 12

    def test_empty_liver_rejected(self):
        shape = (6, 6, 6)
        ct = Volume3D(np.zeros(shape, dtype=np.float32), (1, 1, 1), HU_FLOAT)
        empty = Mask3D(np.zeros(shape, dtype=np.uint8), (1, 1, 1))
        with pytest.raises(ValueError):
            sample_negative_regions(ct, empty, empty, SamplerConfig())


class TestCandidateRegion:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            CandidateRegion(np.zeros((0, 3), dtype=np.int64), (4, 4, 4))

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValueError):
            CandidateRegion(np.array([[5, 0, 0]]), (4, 4, 4))

    def test_coords_sorted_raster(self):
        reg = CandidateRegion(np.array([[2, 1, 1], [0, 0, 3], [0, 0, 1]]), (3, 3, 4))
        flat = np.ravel_multi_index(tuple(reg.coords_zyx.T), (3, 3, 4))
        assert (np.diff(flat) > 0).all()
