import math

import numpy as np
import pytest
from scipy import integrate

from blockperm import (
    DegenerateDesignError,
    RngStream,
    ValidationError,
    chi_sq_survival,
    f_survival,
    sphere_area,
    sphere_sample,
    sqrt_and_det,
    sym_eigen,
)


def _chi2_density(z, df):
    return z ** (df / 2 - 1) * np.exp(-z / 2) / (2 ** (df / 2) * math.gamma(df / 2))


def _f_density(f, d1, d2):
    from scipy.special import beta

    return ((d1 / d2) ** (d1 / 2) * f ** (d1 / 2 - 1)
            * (1 + d1 * f / d2) ** (-(d1 + d2) / 2) / beta(d1 / 2, d2 / 2))


class TestSymEigen:
    def test_identity(self):
        w, v = sym_eigen(np.eye(3))
        assert np.allclose(w, 1.0)

    def test_diagonal(self):
        w, v = sym_eigen(np.diag([4.0, 1.0]))
        assert np.allclose(w, [1.0, 4.0])
        assert np.allclose(np.abs(v), [[0, 1], [1, 0]])

    def test_random_reconstruction(self, rng):
        m = rng.standard_normal((5, 5))
        m = m + m.T
        w, v = sym_eigen(m)
        assert np.linalg.norm(v @ np.diag(w) @ v.T - m) < 1e-10 * np.linalg.norm(m)

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValidationError):
            sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_roundtrip_residuals_1000(self, rng):
        # eigen and square-root contracts over 1000 random PD matrices, dims 1..8
        for _ in range(1000):
            d = int(rng.integers(1, 9))
            a = rng.standard_normal((d, d))
            m = a @ a.T + 0.1 * np.eye(d)
            w, v = sym_eigen(m)
            scale = np.linalg.norm(m)
            assert np.linalg.norm(v @ np.diag(w) @ v.T - m) <= 1e-10 * scale
            assert np.linalg.norm(v @ v.T - np.eye(d)) <= 1e-10
            root, log_det = sqrt_and_det(m)
            assert np.linalg.norm(root @ root - m) <= 1e-9 * scale
            assert math.isclose(log_det, float(np.log(w).sum()), rel_tol=1e-9, abs_tol=1e-12)


class TestSqrtAndDet:
    def test_identity(self):
        root, log_det = sqrt_and_det(np.eye(4))
        assert np.allclose(root, np.eye(4))
        assert log_det == pytest.approx(0.0, abs=1e-14)

    def test_diagonal(self):
        root, log_det = sqrt_and_det(np.diag([4.0, 9.0]))
        assert np.allclose(root, np.diag([2.0, 3.0]))
        assert log_det == pytest.approx(math.log(36.0), rel=1e-12)

    def test_rejects_indefinite(self):
        with pytest.raises(DegenerateDesignError):
            sqrt_and_det(np.diag([1.0, -1e-6]))
        with pytest.raises(DegenerateDesignError):
            sqrt_and_det(np.diag([1.0, 1e-14]))


class TestChiSquared:
    def test_at_zero(self):
        assert chi_sq_survival(0.0, 3) == 1.0

    def test_df2_closed_form(self):
        assert chi_sq_survival(2.0, 2) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_frozen_oracle_value(self):
        # frozen from adaptive quadrature of the chi-squared density
        assert chi_sq_survival(10.0, 3) == pytest.approx(0.0185661354630, abs=1e-10)

    def test_quadrature_oracle_grid(self):
        for df in (1, 2, 3, 5, 10):
            for x in (0.1, 1.0, 5.0, 20.0):
                oracle, err = integrate.quad(_chi2_density, x, np.inf, args=(df,))
                assert abs(chi_sq_survival(x, df) - oracle) <= 1e-8

    def test_monotone_and_bounded(self):
        xs = np.linspace(0, 30, 50)
        vals = [chi_sq_survival(x, 4) for x in xs]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            chi_sq_survival(-0.5, 3)


class TestFSurvival:
    def test_at_zero(self):
        assert f_survival(0.0, 3, 27) == 1.0

    def test_d1_2_closed_form(self):
        assert f_survival(2.5, 2, 8) == pytest.approx((1 + 2 * 2.5 / 8) ** -4, rel=1e-12)

    def test_paper_anchor(self):
        assert f_survival(4.8, 3, 27) == pytest.approx(0.0083, abs=5e-5)

    def test_quadrature_oracle_grid(self):
        for d1, d2 in ((2, 8), (3, 27), (1, 5), (4, 12)):
            for f in (0.5, 2.5, 4.8):
                oracle, err = integrate.quad(_f_density, f, np.inf, args=(d1, d2))
                assert abs(f_survival(f, d1, d2) - oracle) <= 1e-8

    def test_monotone(self):
        vals = [f_survival(f, 3, 27) for f in np.linspace(0, 10, 40)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            f_survival(-1.0, 2, 8)


class TestSphereSample:
    def test_dim1_is_two_point(self):
        s = sphere_sample(1, 100, RngStream(1))
        assert set(np.unique(s)) <= {-1.0, 1.0}

    def test_unit_norms(self):
        s = sphere_sample(4, 1000, RngStream(2))
        assert np.abs(np.linalg.norm(s, axis=1) - 1.0).max() <= 1e-12

    def test_law_of_large_numbers(self):
        n = 100_000
        s = sphere_sample(3, n, RngStream(3))
        assert np.abs(s.mean(axis=0)).max() <= 4.0 / math.sqrt(n)

    def test_deterministic(self):
        a = sphere_sample(3, 50, RngStream(9, 4))
        b = sphere_sample(3, 50, RngStream(9, 4))
        assert np.array_equal(a, b)

    def test_area(self):
        assert sphere_area(1) == pytest.approx(2.0)
        assert sphere_area(2) == pytest.approx(2 * math.pi)
        assert sphere_area(3) == pytest.approx(4 * math.pi)


class TestRngStream:
    def test_reproducible(self):
        g1 = RngStream(123, 5).generator()
        g2 = RngStream(123, 5).generator()
        assert np.array_equal(g1.random(10), g2.random(10))

    def test_streams_differ(self):
        a = RngStream(123, 0).generator().random(10)
        b = RngStream(123, 1).generator().random(10)
        assert not np.array_equal(a, b)

    def test_children_distinct_across_parents(self):
        a = RngStream(1, 0).child(2)
        b = RngStream(1, 1).child(1)
        assert a.stream_id != b.stream_id

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            RngStream(1, -1)
        with pytest.raises(ValidationError):
            RngStream(1, 0).child(-2)
