import math
from itertools import permutations

import numpy as np
import pytest

import blockperm as bp
from blockperm import (
    DegenerateDesignError,
    DomainError,
    classify,
    lambda_at,
    lambda_boundary,
    make_design,
    ray_boundary_radius,
    solve,
    sort_design,
)
from blockperm.cgf import table_for
from conftest import random_design, random_interior_point


def hexagon_design():
    # identical rows (-1, 0, 1): column means (-1, 0, 1), hexagonal domain
    return sort_design(make_design([[-1, 0, 1]] * 4))


class TestClassify:
    def test_origin_interior(self, rng):
        sd = sort_design(random_design(rng, 5, 4))
        loc = classify(sd, np.zeros(3))
        assert loc.kind == "interior" and loc.margin > 0

    def test_vertices(self, rng):
        sd = sort_design(random_design(rng, 3, 4))
        for perm in permutations(range(4)):
            v = sd.col_means[list(perm)][:3]
            loc = classify(sd, v)
            assert loc.kind == "vertex"
            # recovered arrangement reproduces the point
            assert np.allclose(sd.col_means[list(loc.vertex_perm)][:3], v)

    def test_face_example_k3(self):
        sd = hexagon_design()
        # (-1, 0) equals the sorted-means arrangement itself: the l=1 lower
        # face is active there together with the l=2 face (a corner)
        loc0 = classify(sd, np.array([-1.0, 0.0]))
        assert loc0.kind == "vertex"
        assert bp.Face(1, (0,), "lower") in loc0.faces
        # a mid-edge point activates only the l=1 face
        loc_edge = classify(sd, np.array([-1.0, 0.5]))
        assert loc_edge.kind == "boundary"
        assert loc_edge.faces == (bp.Face(1, (0,), "lower"),)
        for eps in (1e-6, 1e-3):
            loc = classify(sd, np.array([-1.0 + eps, eps / 2]))
            assert loc.kind == "interior"

    def test_exterior(self):
        sd = hexagon_design()
        assert classify(sd, np.array([-1.5, 0.0])).kind == "exterior"
        assert classify(sd, np.array([-1.5, 0.0])).margin < 0

    def test_tolerance_parameter(self):
        sd = hexagon_design()
        x = np.array([-1.0 + 1e-7, 0.1])
        assert classify(sd, x).kind == "interior"
        assert classify(sd, x, tol=1e-6).kind == "boundary"


class TestSolve:
    def test_zero(self, rng):
        sd = sort_design(random_design(rng, 4, 4))
        sol = solve(sd, np.zeros(3))
        assert sol.lam == pytest.approx(0.0, abs=1e-12)
        assert np.abs(sol.t).max() <= 1e-10

    def test_k2_closed_form(self):
        # rows (-1, 1): kappa(t) = log cosh t, statistic x*artanh(x) + log(1-x^2)/2
        sd = sort_design(make_design([[-1.0, 1.0], [-1.0, 1.0]]))
        sol = solve(sd, [0.5])
        assert sol.lam == pytest.approx(0.5 * math.atanh(0.5) + 0.5 * math.log(0.75), rel=1e-10)
        assert sol.t[0] == pytest.approx(math.atanh(0.5), rel=1e-9)

    def test_duality_residual(self, rng):
        from blockperm.cgf import kappa_eval

        for _ in range(100):
            b = int(rng.integers(2, 8))
            k = int(rng.integers(2, 6))
            sd = sort_design(random_design(rng, b, k))
            x = random_interior_point(sd, rng)
            sol = solve(sd, x)
            tp = kappa_eval(sd, sol.t)
            assert np.linalg.norm(tp.grad - x) <= 1e-10 * (1 + np.linalg.norm(x))
            assert sol.lam == pytest.approx(float(sol.t @ x) - tp.kappa, abs=1e-12)
            assert sol.lam >= -1e-12

    def test_grid_search_oracle(self, rng):
        # dims <= 2: the statistic is the grid max of t.x - kappa(t)
        from blockperm.cgf import kappa_eval

        for b, k in ((3, 2), (2, 3), (5, 3)):
            sd = sort_design(random_design(rng, b, k))
            x = random_interior_point(sd, rng, shrink=0.5)
            sol = solve(sd, x)
            assert np.abs(sol.t).max() < 5.0  # grid covers the optimum
            step = 0.05
            span = np.arange(-6, 6 + step / 2, step)
            if k == 2:
                grid = span[:, None]
            else:
                grid = np.array([[a, c] for a in span for c in span])
            vals = [float(t @ x) - kappa_eval(sd, t).kappa for t in grid]
            best = max(vals)
            assert best <= sol.lam + 1e-12
            # grid max undershoots by at most ~curvature * (step/2)^2
            bound = 2.0 * (step / 2) ** 2 * (1.0 + np.linalg.norm(sol.hess, 2))
            assert sol.lam - best <= bound

    def test_convexity_of_statistic(self, rng):
        sd = sort_design(random_design(rng, 4, 4))
        for _ in range(25):
            x = random_interior_point(sd, rng)
            y = random_interior_point(sd, rng)
            c = float(rng.uniform(0.2, 0.8))
            lam_mix = lambda_at(sd, c * x + (1 - c) * y)
            assert lam_mix <= c * lambda_at(sd, x) + (1 - c) * lambda_at(sd, y) + 1e-10

    def test_affine_invariance(self, rng):
        # invertible map applied to the permuted-row clouds and the target
        from blockperm._backend import CgfProblem
        from blockperm.design import perm_prefix_table

        b, k = 4, 4
        sd = sort_design(random_design(rng, b, k))
        perm = perm_prefix_table(k)
        cloud = sd.a[:, perm]  # (b, k!, k-1)
        m = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        prob = CgfProblem(cloud=cloud)
        prob_m = CgfProblem(cloud=cloud @ m.T)
        for _ in range(10):
            x = random_interior_point(sd, rng, shrink=0.6)
            r1 = prob.solve(x, None, 1e-12, 200)
            r2 = prob_m.solve(m @ x, None, 1e-12, 200)
            assert r1.status == 0 and r2.status == 0
            assert r2.lam == pytest.approx(r1.lam, abs=1e-9)

    def test_warm_start(self, rng):
        sd = sort_design(random_design(rng, 4, 3))
        x = random_interior_point(sd, rng, shrink=0.4)
        cold = solve(sd, x)
        warm = solve(sd, 1.0001 * x, warm_start=cold.t)
        assert warm.iterations <= cold.iterations + 2

    def test_rejects_boundary_and_exterior(self):
        sd = hexagon_design()
        with pytest.raises(DomainError):
            solve(sd, np.array([-1.0, 0.0]))
        with pytest.raises(DomainError):
            solve(sd, np.array([-2.0, 0.0]))


class TestBoundary:
    def test_l1_face_centroid_gives_log_k(self, rng):
        for k in (3, 4, 5):
            sd = sort_design(random_design(rng, 4, k))
            x = np.empty(k - 1)
            x[0] = sd.col_means[0]
            x[1:] = sd.col_means[1:].mean()
            loc = classify(sd, x)
            assert loc.kind == "boundary"
            face = loc.faces[0]
            assert face.l == 1 and face.side == "lower"
            assert lambda_boundary(sd, x, face) == pytest.approx(math.log(k), abs=1e-10)

    def test_vertex_value(self, rng):
        sd = sort_design(random_design(rng, 3, 4))
        v = sd.col_means[:3]
        assert lambda_at(sd, v) == pytest.approx(math.log(24), rel=1e-12)

    def test_face_not_active_rejected(self, rng):
        sd = sort_design(random_design(rng, 4, 3))
        with pytest.raises(DomainError):
            lambda_boundary(sd, np.zeros(2), bp.Face(1, (0,), "lower"))

    def test_k3_edge_decomposition(self, rng):
        # on an l=1 edge the value is log 3 plus the 1-dim sub-statistic
        sd = sort_design(random_design(rng, 5, 3))
        x = np.array([sd.col_means[0], 0.3 * (sd.col_means[1] - sd.col_means[0])])
        x[1] = sd.col_means[1:].mean() + 0.1 * (sd.col_means[2] - sd.col_means[1])
        loc = classify(sd, x)
        assert loc.kind == "boundary" and loc.faces[0].l == 1
        val = lambda_boundary(sd, x, loc.faces[0])
        assert val >= math.log(3) - 1e-12
        # continuity: interior approach converges to the face value
        approach = lambda_at(sd, (1 - 1e-6) * x)
        assert approach == pytest.approx(val, abs=1e-3)

    def test_upper_side_face(self, rng):
        sd = sort_design(random_design(rng, 4, 4))
        k = 4
        x = np.empty(3)
        x[0] = sd.col_means[-1]  # single coordinate at the top mean
        x[1:] = sd.col_means[:-1].mean()
        loc = classify(sd, x)
        assert loc.kind == "boundary"
        assert loc.faces[0] == bp.Face(1, (0,), "upper")
        assert lambda_boundary(sd, x, loc.faces[0]) == pytest.approx(math.log(k), abs=1e-10)

    def test_lambda_at_total(self, rng):
        sd = sort_design(random_design(rng, 3, 3))
        assert lambda_at(sd, np.zeros(2)) == pytest.approx(0.0, abs=1e-12)
        assert lambda_at(sd, sd.col_means[:2]) == pytest.approx(math.log(6), rel=1e-12)
        assert lambda_at(sd, np.array([99.0, 0.0])) == math.inf


class TestRayBoundaryRadius:
    def test_k2_interval(self, rng):
        raw = rng.standard_normal((5, 2))
        sd = sort_design(make_design(raw))
        m = sd.col_means[1]
        assert ray_boundary_radius(sd, np.array([1.0])) == pytest.approx(m, rel=1e-12)
        assert ray_boundary_radius(sd, np.array([-1.0])) == pytest.approx(m, rel=1e-12)

    def test_vertex_direction(self, rng):
        sd = sort_design(random_design(rng, 4, 4))
        v = sd.col_means[:3]
        r = ray_boundary_radius(sd, v / np.linalg.norm(v))
        assert r == pytest.approx(np.linalg.norm(v), rel=1e-10)

    def test_random_directions(self, rng):
        sd = sort_design(random_design(rng, 5, 4))
        for _ in range(20):
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            r = ray_boundary_radius(sd, direction)
            assert classify(sd, r * direction).kind == "boundary"
            assert classify(sd, 0.999 * r * direction).kind == "interior"

    def test_degenerate(self):
        with pytest.raises(DegenerateDesignError):
            ray_boundary_radius(sort_design(make_design([[1.0, 1.0], [2.0, 2.0]])),
                                np.array([1.0]))
