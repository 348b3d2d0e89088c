"""Conjugate-gradient solver for the graph-regularized reconstruction step.

The reconstruction of a patch channel minimizes
``||b - x||^2 + mu * x^T L x`` with b the interpolated estimate, which is the
SPD linear system ``(I + mu L) x = b``. The system matrix has eigenvalues in
[1, 1 + mu * lambda_max(L)] for weights in [0, 1], so plain CG without a
preconditioner converges quickly; it is never materialized densely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GlrProblem:
    """Right-hand side, Laplacian and trade-off weight of one solve."""

    b: np.ndarray
    graph: "PatchGraph"
    mu: float
    tol: float = 1e-8
    max_iterations: int = 2000

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if b.shape != (self.graph.n,):
            raise ValueError(f"b has shape {b.shape}, graph has {self.graph.n} nodes")
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    converged: bool
    iterations: int
    relative_residual: float


def solve(problem, x0=None):
    """Solve (I + mu L) x = b by conjugate gradient.

    Optionally warm-started from ``x0``. Terminates when the residual norm
    drops below ``tol * ||b||``; if the iteration budget runs out, the best
    iterate seen is returned with ``converged=False``.
    """
    b, mu = problem.b, problem.mu
    L = problem.graph.laplacian
    if mu == 0.0:
        return SolveResult(b.copy(), True, 0, 0.0)

    matvec = lambda v: v + mu * (L @ v)
    x = b.copy() if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    r = b - matvec(x)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return SolveResult(np.zeros_like(b), True, 0, 0.0)
    threshold = problem.tol * b_norm

    r_norm = float(np.linalg.norm(r))
    best_x, best_norm = x.copy(), r_norm
    d = r.copy()
    rs = float(r @ r)
    iterations = 0
    while r_norm > threshold and iterations < problem.max_iterations:
        ad = matvec(d)
        alpha = rs / float(d @ ad)
        x += alpha * d
        r -= alpha * ad
        rs_next = float(r @ r)
        d = r + (rs_next / rs) * d
        rs = rs_next
        iterations += 1
        r_norm = float(np.sqrt(rs_next))
        if r_norm < best_norm:
            best_x, best_norm = x.copy(), r_norm

    if r_norm <= threshold:
        return SolveResult(x, True, iterations, float(r_norm / b_norm))
    return SolveResult(best_x, False, iterations, float(best_norm / b_norm))


def objective(x, b, graph, mu):
    """Value of the regularized objective ||b - x||^2 + mu * x^T L x."""
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = b - x
    return float(diff @ diff + mu * graph.quadratic_form(x))
