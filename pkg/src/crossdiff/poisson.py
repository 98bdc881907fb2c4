"""Zero-mean Neumann Poisson solves and the discrete H^-1 machinery.

Solves -lap(psi) = w - mean(w) with no-flux boundaries and the gauge
integral(psi) = 0, using matrix-free conjugate gradients on the mean-zero
subspace: the right-hand side is projected once, the iterate after every
update.  The discrete Neumann Laplacian built from the grid calculus is
symmetric positive semidefinite with kernel = constants, so CG is exact on
that subspace.

hminus1_seminorm returns ||grad psi||_L2, the discrete H^-1 seminorm of w;
by summation by parts it equals sqrt(<w - mean(w), psi>), and both routes
are computed and cross-checked.  poincare_ratio estimates the best constant
K with ||f||^2 <= K ||grad f||^2 over mean-zero fields via inverse power
iteration, i.e. 1/lambda_1 of the Neumann Laplacian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .grid import Field, Grid, divergence_arrays, grad_sq_sum, gradient_arrays

DEFAULT_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """CG ran out of iterations; carries the best iterate seen."""

    def __init__(self, message: str, best: np.ndarray, residual_norm: float,
                 iterations: int):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations


@dataclass
class PoissonSolution:
    psi: Field
    residual_norm: float  # relative to ||w - mean(w)||
    iterations: int


def conjugate_gradient(apply_a: Callable, b: np.ndarray, x0: np.ndarray,
                       tol: float, max_iter: int,
                       project: Optional[Callable] = None):
    """Matrix-free CG for SPD (or SPSD-with-projection) operators.

    Stops when the true residual satisfies ||b - A x|| <= tol ||b||; the
    recurrence residual triggers the check and is refreshed from the true
    one if roundoff made them drift apart.  Returns (x, iterations,
    relative residual).  A zero right-hand side returns zeros immediately
    with zero iterations.
    """
    norm_b = float(np.linalg.norm(b.ravel()))
    if norm_b == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.array(x0, dtype=float, copy=True)
    if project is not None:
        project(x)
    r = b - apply_a(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    iterations = 0
    target = tol * norm_b
    while True:
        if math.sqrt(rs) <= target:
            true_r = b - apply_a(x)
            true_norm = float(np.linalg.norm(true_r.ravel()))
            if true_norm <= target:
                return x, iterations, true_norm / norm_b
            r = true_r
            p = r.copy()
            rs = float(np.vdot(r, r))
        if iterations >= max_iter:
            raise ConvergenceError(
                f"CG did not reach tol {tol:g} in {max_iter} iterations "
                f"(residual {math.sqrt(rs) / norm_b:.3e})",
                x, math.sqrt(rs) / norm_b, iterations)
        ap = apply_a(p)
        p_ap = float(np.vdot(p, ap))
        if p_ap <= 0.0:
            raise ConvergenceError(
                "CG broke down: operator is not positive definite on the "
                "search space", x, math.sqrt(rs) / norm_b, iterations)
        alpha = rs / p_ap
        x += alpha * p
        if project is not None:
            project(x)
        r -= alpha * ap
        rs_next = float(np.vdot(r, r))
        p *= rs_next / rs
        p += r
        rs = rs_next
        iterations += 1


def neg_laplacian_operator(grid: Grid) -> Callable:
    def apply_a(a: np.ndarray) -> np.ndarray:
        return -divergence_arrays(grid, gradient_arrays(grid, a))
    return apply_a


def _project_mean(x: np.ndarray) -> None:
    x -= x.mean()


def solve_neumann_zero_mean(grid: Grid, w: Field, tol: float = DEFAULT_TOL,
                            max_iter: Optional[int] = None,
                            x0: Optional[np.ndarray] = None) -> PoissonSolution:
    """Solve -lap(psi) = w - mean(w), no-flux, integral(psi) = 0.

    The compatible right-hand side makes the singular Neumann problem
    well-posed on the mean-zero subspace; a w that is constant up to
    rounding noise (the projected part falls below roundoff relative to w)
    yields psi = 0 with zero iterations.  Raises ConvergenceError when
    max_iter (default 10 * cell count) is exhausted.
    """
    if max_iter is None:
        max_iter = 10 * grid.cell_count
    b = w.values - np.mean(w.values)
    if np.linalg.norm(b.ravel()) <= 1e-13 * np.linalg.norm(w.values.ravel()):
        return PoissonSolution(Field(grid, np.zeros(grid.shape)), 0.0, 0)
    start = np.zeros(grid.shape) if x0 is None else x0
    psi, iterations, rel = conjugate_gradient(
        neg_laplacian_operator(grid), b, start, tol, max_iter,
        project=_project_mean)
    _project_mean(psi)
    return PoissonSolution(Field(grid, psi), rel, iterations)


def hminus1_seminorm(grid: Grid, w: Field, tol: float = DEFAULT_TOL) -> float:
    """Discrete H^-1 seminorm of w: ||grad psi|| for the zero-mean solve.

    Cross-checks the gradient route against the duality route
    sqrt(<w - mean(w), psi>); disagreement beyond what the solver tolerance
    allows raises RuntimeError.
    """
    sol = solve_neumann_zero_mean(grid, w, tol=tol)
    psi = sol.psi.values
    grad_sq = grad_sq_sum(grid, psi)
    b = w.values - np.mean(w.values)
    duality_sq = float(np.sum(b * psi)) * grid.cell_volume
    norm_b = math.sqrt(float(np.sum(b * b)) * grid.cell_volume)
    norm_psi = math.sqrt(float(np.sum(psi * psi)) * grid.cell_volume)
    slack = 10.0 * tol * norm_b * norm_psi + 1e-14 * (1.0 + grad_sq)
    if abs(grad_sq - duality_sq) > slack:
        raise RuntimeError(
            f"H^-1 cross-check failed: gradient route {grad_sq:.15e} vs "
            f"duality route {duality_sq:.15e}")
    return math.sqrt(grad_sq)


def poincare_ratio(grid: Grid, tol: float = 1e-6, solver_tol: float = 1e-12,
                   max_sweeps: int = 200) -> float:
    """Best discrete constant in ||f||^2 <= K ||grad f||^2, mean-zero f.

    Inverse power iteration on the Neumann Laplacian: each sweep solves a
    zero-mean Poisson problem, and the Rayleigh quotient <A^-1 z, z>/<z, z>
    converges to 1/lambda_1.  Deterministic seeded start.
    """
    rng = np.random.default_rng(7)
    z = rng.standard_normal(grid.shape)
    z -= z.mean()
    z /= np.linalg.norm(z.ravel())
    estimate = 0.0
    psi = None
    for _ in range(max_sweeps):
        sol = solve_neumann_zero_mean(grid, Field(grid, z), tol=solver_tol,
                                      x0=psi)
        psi = sol.psi.values
        new_estimate = float(np.vdot(psi, z))
        z = psi / np.linalg.norm(psi.ravel())
        if estimate > 0.0 and abs(new_estimate - estimate) <= tol * new_estimate:
            return new_estimate
        estimate = new_estimate
    raise ConvergenceError("power iteration on the inverse Laplacian did not "
                           "settle", z, float("nan"), max_sweeps)
