"""Tests for the conjugate-gradient GLR solver."""

import numpy as np
import pytest

from fglr.graph import build_laplacian
from fglr.solver import GlrProblem, objective, solve


def random_graph(rng, n):
    edges = [
        (i, j, float(rng.uniform(0, 1)))
        for i in range(n)
        for j in range(i + 1, n)
        if rng.uniform() < 0.3
    ]
    return build_laplacian(n, edges)


class TestSolve:
    def test_mu_zero_returns_rhs(self):
        rng = np.random.default_rng(0)
        g = random_graph(rng, 8)
        b = rng.normal(size=8)
        res = solve(GlrProblem(b, g, mu=0.0))
        assert np.array_equal(res.x, b)
        assert res.converged

    def test_two_node_closed_form(self):
        # (I + L) x = (1, 0) with unit edge weight: [[2,-1],[-1,2]] x = (1,0)
        # has the direct solution (2/3, 1/3).
        g = build_laplacian(2, [(0, 1, 1.0)])
        res = solve(GlrProblem(np.array([1.0, 0.0]), g, mu=1.0))
        assert res.converged
        assert np.abs(res.x - [2.0 / 3.0, 1.0 / 3.0]).max() < 1e-10

    def test_constant_rhs_is_fixed_point(self):
        rng = np.random.default_rng(1)
        g = random_graph(rng, 12)
        b = np.full(12, 0.4)
        res = solve(GlrProblem(b, g, mu=2.5))
        assert np.abs(res.x - b).max() < 1e-10

    def test_zero_rhs(self):
        rng = np.random.default_rng(2)
        g = random_graph(rng, 6)
        res = solve(GlrProblem(np.zeros(6), g, mu=1.0))
        assert np.array_equal(res.x, np.zeros(6))
        assert res.converged

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(3)
        for mu in (0.1, 1.0, 10.0):
            for _ in range(10):
                n = int(rng.integers(2, 65))
                g = random_graph(rng, n)
                b = rng.normal(size=n)
                res = solve(GlrProblem(b, g, mu=mu))
                dense = np.eye(n) + mu * g.laplacian.toarray()
                expected = np.linalg.solve(dense, b)
                rel = np.linalg.norm(res.x - expected) / np.linalg.norm(expected)
                assert res.converged and rel < 1e-6

    def test_warm_start_converges_immediately_at_solution(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 16)
        b = rng.normal(size=16)
        first = solve(GlrProblem(b, g, mu=1.0))
        again = solve(GlrProblem(b, g, mu=1.0), x0=first.x)
        assert again.iterations <= 1
        assert np.abs(again.x - first.x).max() < 1e-8

    def test_iteration_budget_returns_best_iterate_with_flag(self):
        rng = np.random.default_rng(5)
        g = random_graph(rng, 32)
        b = rng.normal(size=32)
        res = solve(GlrProblem(b, g, mu=10.0, tol=1e-14, max_iterations=2))
        assert not res.converged
        assert res.iterations == 2
        assert res.relative_residual > 0

    def test_optimality_gradient_norm(self):
        # Gradient of the objective at the solution: 2(x - b) + 2 mu L x.
        rng = np.random.default_rng(6)
        for _ in range(10):
            n = int(rng.integers(4, 64))
            g = random_graph(rng, n)
            b = rng.normal(size=n)
            p = GlrProblem(b, g, mu=1.0)
            res = solve(p)
            grad = 2 * (res.x - b) + 2 * p.mu * (g.laplacian @ res.x)
            assert np.linalg.norm(grad) <= 10 * p.tol * np.linalg.norm(b) + 1e-12

    def test_fidelity_monotone_in_mu(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = int(rng.integers(4, 48))
            g = random_graph(rng, n)
            b = rng.normal(size=n)
            mus = [0.05, 0.5, 2.0, 8.0]
            dists = [np.linalg.norm(solve(GlrProblem(b, g, mu=m)).x - b) for m in mus]
            assert all(a <= b_ + 1e-9 for a, b_ in zip(dists, dists[1:]))

    def test_dimension_mismatch_rejected(self):
        g = build_laplacian(3, [(0, 1, 0.5)])
        with pytest.raises(ValueError, match="shape"):
            GlrProblem(np.zeros(4), g, mu=1.0)

    def test_negative_mu_rejected(self):
        g = build_laplacian(2, [(0, 1, 0.5)])
        with pytest.raises(ValueError, match="mu"):
            GlrProblem(np.zeros(2), g, mu=-0.5)

    def test_gershgorin_certificate(self):
        # Every disc of I + mu L sits strictly in the right half plane.
        rng = np.random.default_rng(8)
        g = random_graph(rng, 24)
        for mu in (0.1, 1.0, 10.0):
            a = np.eye(24) + mu * g.laplacian.toarray()
            centers = np.diag(a)
            radii = np.abs(a).sum(axis=1) - np.abs(centers)
            assert np.all(centers - radii >= 1.0 - 1e-12)


class TestObjective:
    def test_at_rhs_equals_prior_term(self):
        rng = np.random.default_rng(9)
        g = random_graph(rng, 10)
        b = rng.normal(size=10)
        mu = 1.7
        assert objective(b, b, g, mu) == pytest.approx(mu * g.quadratic_form(b), rel=1e-12)

    def test_zero_everywhere(self):
        g = build_laplacian(4, [(0, 1, 0.5)])
        assert objective(np.zeros(4), np.zeros(4), g, 1.0) == 0.0

    def test_solution_never_worse_than_seed(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            n = int(rng.integers(4, 64))
            g = random_graph(rng, n)
            b = rng.normal(size=n)
            mu = float(rng.uniform(0.1, 5.0))
            res = solve(GlrProblem(b, g, mu=mu))
            assert objective(res.x, b, g, mu) <= objective(b, b, g, mu) + 1e-10
