import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specgeo.spectra import (
    DEFAULT_GRID, DegenerateSpectrumError, GridMismatchError, ModeList, Spectrum,
    SpectrumRecord, WavenumberGrid, broaden, normalize, patchify, read_spectrum_file,
    sid, sid_arrays, sis, sis_star, write_spectrum_file,
)

TWO = WavenumberGrid(start=400.0, count=2, spacing=1.0)


def two_bin(a, b):
    return Spectrum(np.array(a), TWO), Spectrum(np.array(b), TWO)


def random_spectrum(rng, grid=DEFAULT_GRID):
    return Spectrum(rng.random(grid.count) ** 3, grid)


class TestGrid:
    def test_defaults(self):
        g = DEFAULT_GRID
        assert g.count == 3200 and g.points[0] == 400.0
        assert g.points[-1] == pytest.approx(4000 - 1.125)
        assert g.count % 64 == 0

    def test_nearest(self):
        assert DEFAULT_GRID.nearest(965.0) == 502
        assert DEFAULT_GRID.points[502] == 964.75


class TestBroaden:
    def test_center_location(self):
        s = broaden(ModeList.from_pairs([[1000, 1]]))
        assert DEFAULT_GRID.points[np.argmax(s.intensities)] == DEFAULT_GRID.points[DEFAULT_GRID.nearest(965.0)]

    def test_center_height(self):
        grid = WavenumberGrid(start=965.0, count=1, spacing=1.0)
        s = broaden(ModeList.from_pairs([[1000, 1]]), grid)
        assert s.intensities[0] == pytest.approx(0.042441, abs=5e-7)
        assert s.intensities[0] == pytest.approx(2 / (math.pi * 15), rel=1e-12)

    def test_empty(self):
        s = broaden(ModeList.from_pairs([]))
        assert not s.intensities.any()

    def test_linear(self):
        rng = np.random.default_rng(0)
        a = ModeList(rng.uniform(500, 4000, 5), rng.random(5))
        b = ModeList(rng.uniform(500, 4000, 3), rng.random(3))
        np.testing.assert_allclose(broaden(a + b).intensities,
                                   broaden(a).intensities + broaden(b).intensities, rtol=1e-12)

    def test_integral(self):
        f, y = 15.0, 2.5
        grid = WavenumberGrid(start=2000 - 50 * f, count=int(100 * f / 0.05), spacing=0.05)
        s = broaden(ModeList.from_pairs([[2000 / 0.965, y]]), grid)
        trapezoid = getattr(np, "trapezoid", None) or np.trapz
        area = trapezoid(s.intensities, grid.points)
        assert abs(area - y) / y < 0.02

    def test_bad_width(self):
        with pytest.raises(ValueError):
            broaden(ModeList.from_pairs([[1000, 1]]), half_width=0)


class TestNormalize:
    def test_constant(self):
        s = normalize(Spectrum(np.ones(3200)))
        np.testing.assert_allclose(s.intensities, 1 / 3200, rtol=1e-14)

    def test_sums_to_one(self):
        s = normalize(random_spectrum(np.random.default_rng(1)))
        assert abs(s.intensities.sum() - 1) < 1e-12

    def test_scale(self):
        s = random_spectrum(np.random.default_rng(2))
        np.testing.assert_allclose(normalize(s.scaled(7.3)).intensities, normalize(s).intensities, rtol=1e-13)

    def test_zero(self):
        with pytest.raises(DegenerateSpectrumError):
            normalize(Spectrum(np.zeros(3200)))


class TestSimilarity:
    def test_two_bin(self):
        a, b = two_bin([0.5, 0.5], [0.25, 0.75])
        expect = 0.5 * math.log(2) + 0.5 * math.log(0.5 / 0.75) + 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert sid(a, b) == pytest.approx(expect, rel=1e-12)
        assert sis(a, b) == pytest.approx(0.78450, abs=1e-4)

    def test_identity(self):
        s = random_spectrum(np.random.default_rng(3))
        assert sid(s, s) == 0.0
        assert sis(s, s) == 1.0
        assert sis_star(s, s) == 1.0

    def test_symmetry_and_scale(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a, b = random_spectrum(rng), random_spectrum(rng)
            assert sid(a, b) == pytest.approx(sid(b, a), rel=1e-12)
            for c in (0.1, 1, 10):
                assert sis(a.scaled(c), b) == pytest.approx(sis(a, b), rel=1e-12)
            assert sis(a, b) < 1

    def test_zero_bins_are_floored(self):
        a, b = two_bin([1.0, 0.0], [0.0, 1.0])
        assert np.isfinite(sid(a, b)) and sis(a, b) > 0

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            sid(Spectrum(np.ones(2), TWO), Spectrum(np.ones(3200)))

    def test_sis_star_ignores_fingerprint_region(self):
        rng = np.random.default_rng(5)
        a = random_spectrum(rng)
        y = a.intensities.copy()
        low = DEFAULT_GRID.points < 1350
        y[low] = rng.random(low.sum())
        assert sis_star(a, Spectrum(y)) == 1.0
        assert sis(a, Spectrum(y)) < 1

    def test_sis_star_equals_truncated_sis(self):
        rng = np.random.default_rng(6)
        a, b = random_spectrum(rng), random_spectrum(rng)
        keep = DEFAULT_GRID.points >= 1350
        start = DEFAULT_GRID.points[keep][0]
        sub = WavenumberGrid(start=start, count=int(keep.sum()), spacing=1.125)
        truncated = sis(Spectrum(a.intensities[keep], sub), Spectrum(b.intensities[keep], sub))
        assert sis_star(a, b) == pytest.approx(truncated, rel=1e-13)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.01, 10), min_size=4, max_size=4),
           st.lists(st.floats(0.01, 10), min_size=4, max_size=4))
    def test_sid_non_negative(self, a, b):
        assert sid_arrays(np.array(a), np.array(b)) >= -1e-15


class TestPatchify:
    def test_shape(self):
        assert patchify(Spectrum(np.ones(3200))).shape == (50, 64)

    def test_first_patch_range(self):
        p0 = DEFAULT_GRID.points[:64]
        assert p0[0] == 400.0 and p0[-1] + 1.125 == 472.0

    def test_partition(self):
        s = random_spectrum(np.random.default_rng(7))
        np.testing.assert_array_equal(patchify(s).reshape(-1), s.intensities)

    def test_divisibility(self):
        with pytest.raises(ValueError):
            patchify(Spectrum(np.ones(3200)), 60)


class TestFile:
    def test_roundtrip(self, tmp_path):
        recs = [SpectrumRecord("a", ModeList.from_pairs([[1000, 1], [2000, 0.5]])),
                SpectrumRecord("b", intensities=np.arange(3200.0))]
        path = tmp_path / "s.jsonl"
        write_spectrum_file(path, recs)
        back = list(read_spectrum_file(path))
        assert [r.id for r in back] == ["a", "b"]
        np.testing.assert_array_equal(back[0].spectrum().intensities, recs[0].spectrum().intensities)
        np.testing.assert_array_equal(back[1].spectrum().intensities, np.arange(3200.0))
