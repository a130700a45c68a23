import numpy as np
import pytest
from scipy import integrate

from fbsde import rng
from fbsde.errors import ValidationError
from fbsde.marks import (MarkSpace, build_finite, integrate_mark, l_kernel,
                         rho, sample_jumps, truncate_density)
from fbsde.pathsim import TimeGrid


def jump_stream(seed=0):
    return rng.CounterStream(seed, rng.STREAM_JUMPS)


class TestBuildFinite:
    def test_single_atom(self):
        ms = build_finite([(1.0, 1.0)])
        assert ms.n_atoms == 1
        assert ms.total_intensity() == 1.0

    def test_symmetric_pair(self):
        ms = build_finite([(0.5, 2.0), (-0.5, 2.0)])
        assert ms.total_intensity() == 4.0

    def test_zero_weight_rejected(self):
        with pytest.raises(ValidationError, match="positive"):
            build_finite([(1.0, 0.0)])

    def test_zero_mark_rejected(self):
        with pytest.raises(ValidationError, match="0 is not in E"):
            build_finite([(0.0, 1.0)])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            build_finite([])

    def test_duplicate_marks_rejected(self):
        with pytest.raises(ValidationError, match="distinct"):
            build_finite([(1.0, 1.0), (1.0, 2.0)])


class TestTruncateDensity:
    def test_single_cell_midpoint(self):
        # midpoint rule on [0.5, 1]: one atom at 0.75, weight 0.75^-2 * 0.5
        ms = truncate_density(lambda e: e ** -2, cutoff=0.5, n_atoms=1,
                              support=(0.5, 1.0))
        assert ms.n_atoms == 1
        assert ms.atoms[0].e == pytest.approx(0.75)
        assert ms.total_intensity() == pytest.approx(0.5 * 0.75 ** -2)
        # quadrature oracle: the exact restricted mass is 1.0
        exact, _ = integrate.quad(lambda e: e ** -2, 0.5, 1.0)
        assert exact == pytest.approx(1.0)
        fine = truncate_density(lambda e: e ** -2, cutoff=0.5, n_atoms=400,
                                support=(0.5, 1.0))
        assert fine.total_intensity() == pytest.approx(exact, rel=1e-4)
        assert fine.cutoff == 0.5

    def test_two_cell_constant_density(self):
        ms = truncate_density(lambda e: 1.0, cutoff=1.0, n_atoms=2,
                              support=(1.0, 2.0))
        assert ms.n_atoms == 2
        np.testing.assert_allclose(ms.marks(), [1.25, 1.75])
        assert ms.total_intensity() == pytest.approx(1.0)

    def test_two_sided_support(self):
        ms = truncate_density(lambda e: 1.0, cutoff=0.5, n_atoms=2,
                              support=(-1.0, 1.0))
        assert ms.n_atoms == 4
        assert ms.total_intensity() == pytest.approx(1.0)

    def test_zero_density_rejected(self):
        with pytest.raises(ValidationError, match="empty effective support"):
            truncate_density(lambda e: 0.0, cutoff=0.5, n_atoms=3,
                             support=(-1.0, 1.0))

    def test_negative_density_rejected(self):
        with pytest.raises(ValidationError, match="negative"):
            truncate_density(lambda e: -1.0, cutoff=0.5, n_atoms=2,
                             support=(0.5, 1.0))

    def test_bad_cutoff_rejected(self):
        with pytest.raises(ValidationError, match="cutoff"):
            truncate_density(lambda e: 1.0, cutoff=0.0, n_atoms=2)


class TestIntegrateMark:
    def test_total_mass(self):
        ms = build_finite([(0.5, 2.0), (-0.5, 2.0)])
        assert integrate_mark(lambda e: 1.0, ms) == 4.0

    def test_saturating_kernel(self):
        ms = build_finite([(2.0, 3.0)])
        assert integrate_mark(lambda e: min(1.0, e ** 2), ms) == 3.0

    def test_odd_symmetry(self):
        ms = build_finite([(0.5, 2.0), (-0.5, 2.0)])
        assert integrate_mark(lambda e: e, ms) == 0.0

    def test_non_finite_rejected(self):
        ms = build_finite([(0.5, 2.0)])
        with pytest.raises(ValidationError, match="not finite"):
            integrate_mark(lambda e: float("inf"), ms)

    def test_square_kernel_matches_invariant(self):
        ms = build_finite([(0.25, 1.5), (-2.0, 0.5), (3.0, 0.1)])
        manual = sum(a.weight * min(1.0, a.e ** 2) for a in ms.atoms)
        assert integrate_mark(lambda e: min(1.0, e ** 2), ms) == manual


class TestKernels:
    def test_rho(self):
        ms = build_finite([(1.0, 1.0)], rho_scale=2.0)
        assert rho(ms, 0.25) == 0.5
        assert rho(ms, 7.0) == 2.0

    def test_l_default(self):
        ms = build_finite([(1.0, 1.0)])
        assert float(l_kernel(ms, -0.3)) == pytest.approx(0.3)
        assert ms.l_scale == pytest.approx(1.0)

    def test_l_scale_derived(self):
        ms = build_finite([(0.5, 1.0)], l="2*cap1(e)")
        assert ms.l_scale == pytest.approx(2.0)

    def test_l_negative_rejected(self):
        with pytest.raises(ValidationError, match="nonnegative"):
            build_finite([(0.5, 1.0)], l="-cap1(e)")

    def test_l_scale_too_small_rejected(self):
        with pytest.raises(ValidationError, match="exceeds"):
            MarkSpace(atoms=build_finite([(0.5, 1.0)], l="2*cap1(e)").atoms,
                      l_expr=build_finite([(0.5, 1.0)], l="2*cap1(e)").l_expr,
                      l_scale=1.0)

    def test_json_roundtrip(self):
        ms = build_finite([(0.5, 2.0), (-0.5, 2.0)], cutoff=0.1,
                          rho_scale=0.3, l="cap1(e)")
        back = MarkSpace.from_json(ms.to_json())
        assert back == ms


class TestSampleJumps:
    def test_poisson_mean_band(self):
        # weight 2.0, dt = 0.01, 1e5 cells: 3-sigma band around 0.02
        ms = build_finite([(1.0, 2.0)])
        grid = TimeGrid(0.0, 1.0, 100)
        sched = sample_jumps(ms, grid, 1000, jump_stream(3))
        counts = sched.counts[:, :, 0]
        assert counts.size == 100_000
        assert 0.0186 <= counts.mean() <= 0.0214
        assert abs(counts.var() - 0.02) <= 3 * 0.02 / np.sqrt(counts.size) * 3

    def test_determinism_and_chunking(self):
        ms = build_finite([(0.5, 2.0), (-0.5, 1.0)])
        grid = TimeGrid(0.0, 0.5, 20)
        full = sample_jumps(ms, grid, 64, jump_stream(9)).counts
        again = sample_jumps(ms, grid, 64, jump_stream(9)).counts
        np.testing.assert_array_equal(full, again)
        parts = [sample_jumps(ms, grid, 64, jump_stream(9), path_lo=lo,
                              path_hi=hi).counts
                 for lo, hi in ((0, 10), (10, 40), (40, 64))]
        np.testing.assert_array_equal(full, np.concatenate(parts, axis=0))

    def test_dispersion_99_band(self):
        # sum of (N - m)^2 / m over C cells: mean C, variance C (1/m + 2)
        ms = build_finite([(1.0, 2.0)])
        grid = TimeGrid(0.0, 1.0, 100)
        counts = sample_jumps(ms, grid, 1000, jump_stream(5)).counts[:, :, 0]
        m = 0.02
        c = counts.size
        stat = float(((counts - m) ** 2 / m).sum())
        band = 2.576 * np.sqrt(c * (1.0 / m + 2.0))
        assert abs(stat - c) <= band

    def test_compensated_sum_martingale(self):
        ms = build_finite([(0.5, 2.0), (-0.5, 1.0)])
        grid = TimeGrid(0.0, 0.5, 25)
        sched = sample_jumps(ms, grid, 4000, jump_stream(7))
        f = np.minimum(1.0, np.abs(ms.marks()))
        per_path = ((sched.counts - ms.weights() * grid.dt) * f).sum(axis=(1, 2))
        se = per_path.std(ddof=1) / np.sqrt(len(per_path))
        assert abs(per_path.mean()) <= 3 * se

    def test_large_mean_split(self):
        # mean 20 goes through the split-and-invert route, exact law
        assert rng.poisson_words(20.0) == 2
        assert rng.poisson_words(5.0) == 1
        assert rng.poisson_words(200.0) == 32
        ms = build_finite([(1.0, 2000.0)])
        grid = TimeGrid(0.0, 0.1, 10)  # mean per cell = 20
        counts = sample_jumps(ms, grid, 2000, jump_stream(11)).counts
        mean, var = counts.mean(), counts.var()
        n = counts.size
        assert abs(mean - 20.0) <= 3 * np.sqrt(20.0 / n)
        # Poisson variance 20; var of the variance estimator ~ (mu4 - var^2)/n
        mu4 = 20 + 3 * 20 ** 2
        assert abs(var - 20.0) <= 3 * np.sqrt((mu4 - 400) / n)

    def test_bad_path_count(self):
        ms = build_finite([(1.0, 1.0)])
        with pytest.raises(ValidationError):
            sample_jumps(ms, TimeGrid(0.0, 1.0, 10), 0, jump_stream())
