import math

import numpy as np
import pytest

import blockperm as bp
from blockperm import (
    ErrorModel,
    RngStream,
    ValidationError,
    accuracy_experiment,
    default_effect_grid,
    effect_vector,
    gen_design,
    power_experiment,
    unconditional_accuracy,
)
from blockperm.simulate import effect_scale, saddlepoint_pvalues


class TestErrorModel:
    def test_families_draw(self):
        gen = RngStream(1).generator()
        for family in ("normal", "exponential", "uniform"):
            out = ErrorModel(family).draw(gen, (3, 4))
            assert out.shape == (3, 4)

    def test_exponential_squared_is_squared_draw(self):
        m = ErrorModel("exponential_squared")
        a = m.draw(RngStream(7).generator(), (100,))
        b = RngStream(7).generator().standard_exponential((100,)) ** 2
        assert np.array_equal(a, b)

    def test_gamma_needs_shape(self):
        with pytest.raises(ValidationError):
            ErrorModel("gamma")
        out = ErrorModel("gamma", shape=5.0).draw(RngStream(2).generator(), (50,))
        assert np.all(out > 0)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            ErrorModel("cauchy")

    def test_scale_and_loc(self):
        base = ErrorModel("normal").draw(RngStream(3).generator(), (40,))
        moved = ErrorModel("normal", loc=2.0, scale=0.5).draw(RngStream(3).generator(), (40,))
        assert np.allclose(moved, 2.0 + 0.5 * base)


class TestGenDesign:
    def test_null_design_centered(self):
        d = gen_design(ErrorModel("normal"), 6, 4, None, RngStream(4))
        assert np.abs(d.x.sum(axis=1)).max() <= 1e-12

    def test_deterministic(self):
        a = gen_design(ErrorModel("exponential"), 5, 3, None, RngStream(9, 2))
        b = gen_design(ErrorModel("exponential"), 5, 3, None, RngStream(9, 2))
        assert np.array_equal(a.x, b.x)

    def test_effect_shifts_columns(self):
        mu = effect_vector(4, 1.0)
        base = gen_design(ErrorModel("normal"), 200, 4, None, RngStream(5))
        shifted = gen_design(ErrorModel("normal"), 200, 4, mu, RngStream(5))
        diff = shifted.x.mean(axis=0) - base.x.mean(axis=0)
        assert diff[0] == pytest.approx(-1.0 + 0.0, abs=0.05)
        assert diff[-1] == pytest.approx(1.0 + 0.0, abs=0.05)

    def test_rejects_bad_mu(self):
        with pytest.raises(ValidationError):
            gen_design(ErrorModel("normal"), 4, 3, [1.0, 2.0], RngStream(1))


class TestEffects:
    def test_vector_pattern(self):
        assert np.allclose(effect_vector(4, 0.2), [-0.2, 0, 0, 0.2])
        assert np.allclose(effect_vector(3, 1.0), [-1.0, 0, 1.0])

    def test_default_grid_labels(self):
        grid = default_effect_grid(4)
        labels = [effect_scale(mu) for mu in grid]
        assert labels == pytest.approx([0.0, 0.04, 0.16, 0.36, 0.64, 1.0, 1.44, 1.96])


class TestAccuracyExperiment:
    def test_table_shape_and_pattern(self):
        res = accuracy_experiment(ErrorModel("exponential_squared"), 10, 4,
                                  [0.6, 0.8, 1.0, 1.2, 1.4],
                                  n_mc=20_000, n_sphere=60, seed=3)
        assert res.design.shape == (10, 4)
        table = res.table
        assert all(len(row) == 5 for row in table.rows.values())
        # saddlepoint rows track the Monte Carlo row within loose MC noise
        for i in range(5):
            tol = 3 * (table.ses["mc_lambda"][i] + table.ses["sp_lr"][i]) + 0.01
            assert abs(table.rows["sp_lr"][i] - table.rows["mc_lambda"][i]) <= tol

    def test_k3_warns_near_cap(self):
        res = accuracy_experiment(ErrorModel("exponential_squared"), 5, 3,
                                  [1.0, 1.49], n_mc=1000, n_sphere=10, seed=1)
        assert math.isnan(res.table.rows["sp_lr"][1])
        assert any("1.48" in note for note in res.table.notes.values())

    def test_gaussian_errors_high_accuracy(self):
        res = accuracy_experiment(ErrorModel("normal"), 10, 4, [0.6, 1.0],
                                  n_mc=40_000, n_sphere=100, seed=8)
        t = res.table
        for i in range(2):
            tol = 3 * (t.ses["mc_lambda"][i] + t.ses["sp_lr"][i])
            assert abs(t.rows["sp_lr"][i] - t.rows["mc_lambda"][i]) <= tol


class TestUnconditional:
    def test_reduces_to_accuracy_at_one_outer(self):
        kwargs = dict(b=10, k=4, u_values=[0.6, 1.0], seed=21)
        acc = accuracy_experiment(ErrorModel("exponential_squared"), 10, 4, [0.6, 1.0],
                                  n_mc=4000, n_sphere=10, seed=21)
        unc = unconditional_accuracy(ErrorModel("exponential_squared"),
                                     n_outer=1, n_inner=4000, **kwargs)
        assert unc.rows["e_mc_f"] == acc.table.rows["mc_f"]

    def test_normal_matches_f_distribution(self):
        unc = unconditional_accuracy(ErrorModel("normal"), 10, 4, [0.6, 1.0],
                                     n_outer=60, n_inner=4000, seed=5)
        for i in range(2):
            diff = abs(unc.rows["e_mc_f"][i] - unc.rows["f"][i])
            assert diff <= 3 * unc.ses["e_mc_f"][i] + 0.01

    def test_heavy_tail_undershoots_far_tail(self):
        # averaged Monte Carlo F proportions fall below the F row at u = 1.0
        unc = unconditional_accuracy(ErrorModel("exponential_squared"), 10, 4,
                                     [1.0], n_outer=80, n_inner=4000, seed=6)
        assert unc.rows["e_mc_f"][0] < unc.rows["f"][0] - 2 * unc.ses["e_mc_f"][0]

    def test_capacity(self):
        with pytest.raises(bp.CapacityError):
            unconditional_accuracy(ErrorModel("normal"), 10, 4, [1.0],
                                   n_outer=10_000, n_inner=1_000_000, seed=1)


class TestSaddlepointPvalues:
    def test_null_centroid_p_one(self):
        d = bp.make_design([[-1, 0, 1], [1, 0, -1]])
        p_lr, p_bn, flagged = saddlepoint_pvalues(d, 20, RngStream(1))
        assert p_lr == 1.0 and p_bn == 1.0 and not flagged

    def test_flagged_near_cap(self, rng):
        # strongly separated design pushes the statistic past the cap
        raw = np.tile([0.0, 5.0, 10.0, 20.0], (6, 1)) + 0.01 * rng.standard_normal((6, 4))
        d = bp.make_design(raw)
        p_lr, p_bn, flagged = saddlepoint_pvalues(d, 30, RngStream(2))
        assert flagged
        assert p_lr <= 0.01 and p_bn <= 0.01


class TestPowerExperiment:
    def test_deterministic_and_monotone(self):
        m = ErrorModel("exponential_squared", scale=20 ** -0.5)
        effects = [effect_vector(4, 0.0), effect_vector(4, 1.4)]
        a = power_experiment(m, 10, 4, effects, n_replicates=60, n_perm=500,
                             n_sphere=20, seed=12)
        b_ = power_experiment(m, 10, 4, effects, n_replicates=60, n_perm=500,
                              n_sphere=20, seed=12)
        assert a == b_
        assert a.rows[1].power_f >= a.rows[0].power_f
        assert a.rows[1].power_lr >= a.rows[0].power_lr

    def test_null_level(self):
        m = ErrorModel("normal")
        res = power_experiment(m, 10, 4, [effect_vector(4, 0.0)],
                               n_replicates=250, n_perm=800, n_sphere=40, seed=13)
        row = res.rows[0]
        window = 3 * math.sqrt(0.05 * 0.95 / 250)
        assert abs(row.power_f - 0.05) <= window + 0.02
        assert abs(row.power_lr - 0.05) <= window + 0.02

    def test_thread_invariance(self):
        m = ErrorModel("normal")
        effects = [effect_vector(4, 0.4)]
        a = power_experiment(m, 10, 4, effects, n_replicates=40, n_perm=400,
                             n_sphere=20, seed=14, threads=1)
        b_ = power_experiment(m, 10, 4, effects, n_replicates=40, n_perm=400,
                              n_sphere=20, seed=14, threads=3)
        assert a.rows == b_.rows

    def test_progress_callback(self):
        calls = []
        power_experiment(ErrorModel("normal"), 4, 3, [effect_vector(3, 0.0)],
                         n_replicates=5, n_perm=100, n_sphere=10, seed=15,
                         progress=lambda done, total: calls.append((done, total)))
        assert calls and calls[-1] == (5, 5)
