import numpy as np
import pytest

from tumorpost.radiomics.wavelet import BAND_NAMES, haar3d, ihaar3d


class TestHaar3d:
    def test_constant_volume(self):
        c = 7.0
        bands = haar3d(np.full((4, 4, 4), c))
        assert np.allclose(bands["LLL"], c * 2 ** 1.5)
        for name in BAND_NAMES[1:]:
            assert np.allclose(bands[name], 0.0)

    def test_band_count_and_shapes(self):
        bands = haar3d(np.zeros((6, 4, 8)))
        assert list(bands) == list(BAND_NAMES)
        for arr in bands.values():
            assert arr.shape == (3, 2, 4)

    def test_perfect_reconstruction_even_dims(self):
        gen = np.random.default_rng(0)
        for _ in range(20):
            dims = tuple(2 * int(gen.integers(1, 7)) for _ in range(3))
            x = gen.normal(size=dims)
            back = ihaar3d(haar3d(x))
            assert np.abs(back - x).max() < 1e-9

    def test_parseval_energy(self):
        gen = np.random.default_rng(1)
        for _ in range(20):
            dims = tuple(2 * int(gen.integers(1, 7)) for _ in range(3))
            x = gen.normal(size=dims)
            bands = haar3d(x)
            e_bands = sum(float((b ** 2).sum()) for b in bands.values())
            e_input = float((x ** 2).sum())
            assert abs(e_bands - e_input) / e_input < 1e-6

    def test_odd_dims_padded_to_even(self):
        x = np.arange(3 * 5 * 7, dtype=np.float64).reshape(3, 5, 7)
        bands = haar3d(x)
        assert bands["LLL"].shape == (2, 3, 4)

    def test_linearity(self):
        gen = np.random.default_rng(2)
        x = gen.normal(size=(4, 4, 4))
        bands1 = haar3d(x)
        bands2 = haar3d(2.0 * x)
        for name in BAND_NAMES:
            assert np.allclose(bands2[name], 2.0 * bands1[name])
