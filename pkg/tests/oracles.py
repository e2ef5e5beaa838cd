"""Independent oracles used by the test suite.

These deliberately follow different computational routes than the library:
interior-point conic solves, dense normal equations, and explicit Kronecker
constructions.
"""

import numpy as np


def socp_lasso_objective(A, b, lam, weights=None, solver="CLARABEL"):
    """Interior-point oracle for min ||Ax-b||_2^2 + lam sum w_i |x_i| over
    complex x, via the real/imaginary-split second-order-cone formulation."""
    import cvxpy as cp

    A = np.asarray(A)
    b = np.asarray(b).ravel()
    m, n = A.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    M = np.block([[A.real, -A.imag], [A.imag, A.real]])
    bb = np.concatenate([b.real, b.imag])
    z = cp.Variable(2 * n)
    t = cp.Variable(n)
    constraints = [cp.norm(cp.hstack([z[i], z[n + i]])) <= t[i] for i in range(n)]
    problem = cp.Problem(cp.Minimize(cp.sum_squares(M @ z - bb) + lam * (w @ t)), constraints)
    problem.solve(solver=solver)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"oracle solve failed: {problem.status}")
    return float(problem.value)


def normal_equations_ols(A, b):
    """(A^H A)^{-1} A^H b for full-column-rank A."""
    A = np.asarray(A)
    return np.linalg.solve(A.conj().T @ A, A.conj().T @ np.asarray(b).ravel())


def random_complex(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)
