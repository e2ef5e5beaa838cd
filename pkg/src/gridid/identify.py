"""Admittance identification pipelines.

Three routes: the well-posed full-matrix regression (voltage data with full
row rank), refinement of an approximate prior model by ridge regression on
the symmetric error matrix, and the low-rank partition that recovers a
trusted submatrix when the voltage data is rank deficient.  The partition
splits terminals into a basis set (rows of V that are linearly independent)
and a dependent set expressed through the basis; the basis-block equation
-X^T Y11 X + Y22 = C then supports sparse recovery of Y22 regardless of the
deficiency, while Y11 and Y12 remain best-effort and are flagged as such.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import symvec
from .exceptions import RankDeficiencyError
from .netmodel import AdmittanceMatrix
from .phasors import PhasorDataset, numerical_rank
from .solvers import (
    LinearOperator,
    adaptive_lasso,
    cross_validate,
    default_gamma_grid,
    default_lambda_grid,
    lasso_path_solve,
    ridge,
)


# ------------------------------------------------------------ design operator

def design_operator(V: np.ndarray, negate: bool = False) -> LinearOperator:
    """Matrix-free Ohm's-law regression operator x -> vec(f_unvec(x) @ V).

    The gram product uses the precomputed dim x dim matrix V V^H, so solver
    iterations never touch the K axis.
    """
    V = np.asarray(V, dtype=complex)
    n, k = V.shape
    cols = symvec.tril_size(n)
    G = V @ V.conj().T
    sign = -1.0 if negate else 1.0

    def apply(x):
        return sign * symvec.design_apply(V, x)

    def adjoint(r):
        return sign * symvec.design_adjoint(V, r)

    def gram(x):
        return symvec.fold_vec(symvec.f_unvec(x) @ G)

    return LinearOperator((n * k, cols), apply, adjoint, gram=gram)


def _vec(M):
    return np.asarray(M, dtype=complex).ravel(order="F")


def _solve_ohm(V, I, method, lam, gamma, lam_grid, gamma_grid, folds, solver_kwargs):
    """Shared regression core: optional CV over time slots, then final solve."""
    if method not in ("lasso", "adaptive"):
        raise ValueError(f"unknown method {method!r}")
    lam_grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, float)
    gamma_grid = default_gamma_grid() if gamma_grid is None else tuple(gamma_grid)
    selected_by = "fixed"
    if lam == "auto" or (method == "adaptive" and gamma == "auto"):
        lams = lam_grid if lam == "auto" else np.array([float(lam)])
        gammas = (gamma_grid if gamma == "auto" else (float(gamma),)) \
            if method == "adaptive" else None

        def fold_builder(train_idx, val_idx):
            return (design_operator(V[:, train_idx]), _vec(I[:, train_idx]),
                    design_operator(V[:, val_idx]), _vec(I[:, val_idx]))

        cv = cross_validate(fold_builder, V.shape[1], lam_grid=lams, gamma_grid=gammas,
                            folds=folds, **solver_kwargs)
        lam, gamma = cv.lam, cv.gamma if cv.gamma is not None else gamma
        selected_by = "cv"

    op = design_operator(V)
    b = _vec(I)
    if method == "adaptive":
        sol = adaptive_lasso(op, b, lam=float(lam), gamma=float(gamma), **solver_kwargs)
    else:
        sol = lasso_path_solve(op, b, lam=float(lam), **solver_kwargs)
    diagnostics = {
        "method": method,
        "lambda": float(lam),
        "gamma": float(gamma) if method == "adaptive" else None,
        "selected_by": selected_by,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "objective": sol.objective,
        "pg_residual": sol.pg_residual,
        "initializer": sol.initializer,
    }
    return sol.x, diagnostics


# ----------------------------------------------------------- well-posed route

def identify_wellposed(ds: PhasorDataset, method: str = "adaptive",
                       lam="auto", gamma="auto", rank_tol: float = 1e-8,
                       lam_grid=None, gamma_grid=None, folds: int = 3,
                       **solver_kwargs):
    """Recover the full admittance matrix; requires full-row-rank voltages.

    Returns (AdmittanceMatrix, diagnostics).
    """
    rank = numerical_rank(ds.V, rank_tol)
    if rank < ds.dim:
        raise RankDeficiencyError(
            f"voltage data has numerical rank {rank} < {ds.dim} terminals "
            f"(K={ds.slots} slots); the full matrix is not identifiable - "
            "use lowrank_identify"
        )
    x, diagnostics = _solve_ohm(ds.V, ds.I, method, lam, gamma,
                                lam_grid, gamma_grid, folds, solver_kwargs)
    ybus = AdmittanceMatrix.from_dense(symvec.f_unvec(x), ds.terminals)
    return ybus, diagnostics


# ------------------------------------------------------------- prior refinement

@dataclass(frozen=True)
class PriorModel:
    """Approximate admittance matrix whose error is small and dense."""

    ybus: AdmittanceMatrix
    error_mode: str = "small-dense"


def refine_with_prior(ds: PhasorDataset, prior, lam: float) -> AdmittanceMatrix:
    """Correct an approximate model: ridge-estimate the symmetric error
    matrix P solving (Ytilde - P) V = I, then return Ytilde - P_hat."""
    ytilde = prior.ybus if isinstance(prior, PriorModel) else prior
    if ytilde.terminals != ds.terminals:
        raise ValueError("prior terminals do not match the dataset")
    Yt = ytilde.to_dense()
    op = design_operator(ds.V, negate=True)
    b = _vec(ds.I - Yt @ ds.V)
    x = ridge(op, b, lam)
    psi = symvec.f_unvec(x)
    return AdmittanceMatrix.from_dense(Yt - psi, ds.terminals)


# ------------------------------------------------------------- basis selection

@dataclass(frozen=True)
class BasisSelection:
    basis: np.ndarray
    dependent: np.ndarray
    perm: np.ndarray  # [dependent..., basis...]
    r_diag: np.ndarray

    @property
    def rank(self):
        return len(self.basis)


def select_basis(V: np.ndarray, eps: float = 1e-8) -> BasisSelection:
    """Pick a maximal set of linearly independent voltage rows.

    QR with column pivoting on V^T; rows whose pivot magnitude exceeds
    ``eps`` times the largest are kept.  Pivoting is deterministic (largest
    remaining column norm first, ties resolved at the lowest index by the
    LAPACK sweep order), and the returned index sets are sorted.
    """
    V = np.asarray(V, dtype=complex)
    if V.size == 0 or not np.any(V):
        raise ValueError("all-zero voltage matrix")
    _, R, piv = sla.qr(V.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > eps * d[0]))
    basis = np.sort(piv[:rank])
    dependent = np.sort(piv[rank:])
    return BasisSelection(
        basis=basis,
        dependent=dependent,
        perm=np.concatenate([dependent, basis]),
        r_diag=d,
    )


def estimate_basis_coeff(V1: np.ndarray, V2: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """X with V1 = X V2 in least squares, via the pseudo-inverse of V2."""
    V1 = np.asarray(V1, dtype=complex)
    V2 = np.asarray(V2, dtype=complex)
    if V1.shape[0] == 0:
        return np.zeros((0, V2.shape[0]), dtype=complex)
    s = np.linalg.svd(V2, compute_uv=False)
    if s.size == 0 or s[-1] <= rank_tol * s[0]:
        raise ValueError("basis voltage block is rank deficient")
    X_t, *_ = np.linalg.lstsq(V2.T, V1.T, rcond=None)
    return X_t.T


def constant_matrix(X, V1, V2, I1, I2) -> np.ndarray:
    """Data-side constant C = I2 V2^+ - (V2^+)^T I1^T X of the basis-block
    equation -X^T Y11 X + Y22 = C."""
    V2p = np.linalg.pinv(np.asarray(V2, dtype=complex))
    C = np.asarray(I2, dtype=complex) @ V2p
    if np.asarray(X).shape[0]:
        C = C - V2p.T @ np.asarray(I1, dtype=complex).T @ np.asarray(X)
    return C


# -------------------------------------------------------- block recovery

def _stacked_operator(X: np.ndarray, r: int) -> LinearOperator:
    """Operator [ -(X^T kron X^T) Q1 , Q2 ] acting on [f(Y11); f(Y22)]."""
    X = np.asarray(X, dtype=complex)
    n1 = X.shape[0]
    l1, l2 = symvec.tril_size(n1), symvec.tril_size(r)
    Xc = X.conj()

    def apply(x):
        M = symvec.f_unvec(x[l1:])
        if n1:
            M = M - X.T @ symvec.f_unvec(x[:l1]) @ X
        return M.ravel(order="F")

    def adjoint(rv):
        RM = rv.reshape((r, r), order="F")
        out = np.empty(l1 + l2, dtype=complex)
        if n1:
            out[:l1] = -symvec.fold_vec(Xc @ RM @ Xc.T)
        out[l1:] = symvec.fold_vec(RM)
        return out

    return LinearOperator((r * r, l1 + l2), apply, adjoint)


def recover_y22_y11(X: np.ndarray, C: np.ndarray, method: str = "adaptive",
                    lam="auto", gamma="auto", cv_data=None,
                    lam_grid=None, gamma_grid=None, folds: int = 3,
                    **solver_kwargs):
    """Joint sparse recovery of the dependent and basis diagonal blocks.

    The constraint leaves Y11 underdetermined by construction (any symmetric
    W can be traded against X^T W X in Y22), so sparsity is what pins the
    blocks; Y22 is the trustworthy one.  ``lam='auto'`` requires ``cv_data``
    = (V1, V2, I1, I2) so folds can rebuild C over time-slot subsets.

    Returns (Y11_hat, Y22_hat, diagnostics).
    """
    if method not in ("lasso", "adaptive"):
        raise ValueError(f"unknown method {method!r}")
    X = np.asarray(X, dtype=complex)
    r = C.shape[0]
    n1 = X.shape[0]
    l1 = symvec.tril_size(n1)
    op = _stacked_operator(X, r)
    b = _vec(C)
    selected_by = "fixed"
    lam_grid = default_lambda_grid() if lam_grid is None else np.asarray(lam_grid, float)
    gamma_grid = default_gamma_grid() if gamma_grid is None else tuple(gamma_grid)

    if lam == "auto" or (method == "adaptive" and gamma == "auto"):
        if cv_data is None:
            raise ValueError("lam/gamma 'auto' needs cv_data=(V1, V2, I1, I2)")
        V1, V2, I1, I2 = cv_data
        lams = lam_grid if lam == "auto" else np.array([float(lam)])
        gammas = (gamma_grid if gamma == "auto" else (float(gamma),)) \
            if method == "adaptive" else None

        def fold_builder(train_idx, val_idx):
            b_tr = _vec(constant_matrix(X, V1[:, train_idx], V2[:, train_idx],
                                        I1[:, train_idx], I2[:, train_idx]))
            b_val = _vec(constant_matrix(X, V1[:, val_idx], V2[:, val_idx],
                                         I1[:, val_idx], I2[:, val_idx]))
            return op, b_tr, op, b_val

        cv = cross_validate(fold_builder, V2.shape[1], lam_grid=lams, gamma_grid=gammas,
                            folds=folds, **solver_kwargs)
        lam, gamma = cv.lam, cv.gamma if cv.gamma is not None else gamma
        selected_by = "cv"

    if method == "adaptive":
        sol = adaptive_lasso(op, b, lam=float(lam), gamma=float(gamma), **solver_kwargs)
    else:
        sol = lasso_path_solve(op, b, lam=float(lam), **solver_kwargs)
    y11 = symvec.f_unvec(sol.x[:l1]) if n1 else np.zeros((0, 0), dtype=complex)
    y22 = symvec.f_unvec(sol.x[l1:])
    residual = float(np.linalg.norm((-X.T @ y11 @ X if n1 else 0) + y22 - C, "fro"))
    diagnostics = {
        "method": method,
        "lambda": float(lam),
        "gamma": float(gamma) if method == "adaptive" else None,
        "selected_by": selected_by,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "objective": sol.objective,
        "pg_residual": sol.pg_residual,
        "initializer": sol.initializer,
        "constraint_residual": residual,
    }
    return y11, y22, diagnostics


def recover_y12(X: np.ndarray, Y22_hat: np.ndarray, I2: np.ndarray,
                V2: np.ndarray) -> np.ndarray:
    """Least-squares coupling block from I2 = (Y12^T X + Y22) V2.

    Errors in Y22 propagate here, so the result is never trusted.
    """
    X = np.asarray(X, dtype=complex)
    n1, r = X.shape
    if n1 == 0:
        return np.zeros((0, r), dtype=complex)
    W = X @ np.asarray(V2, dtype=complex)
    B = np.asarray(I2, dtype=complex) - np.asarray(Y22_hat, dtype=complex) @ V2
    y12, *_ = np.linalg.lstsq(W.T, B.T, rcond=None)
    return y12


# ---------------------------------------------------------- full low-rank run

@dataclass
class PartialIdentification:
    """Low-rank identification result.

    ``y22`` (basis block) is the trusted estimate; ``y11`` and ``y12`` are
    best-effort and flagged untrusted whenever a dependent set exists.
    """

    terminals: tuple
    basis: np.ndarray
    dependent: np.ndarray
    perm: np.ndarray
    rank: int
    X: np.ndarray
    C: np.ndarray
    y11: np.ndarray
    y12: np.ndarray
    y22: np.ndarray
    trust: dict
    basis_residual: float
    diagnostics: dict = field(default_factory=dict)

    def trusted_terminals(self):
        return tuple(self.terminals[i] for i in self.basis)

    def ambiguous_y22_entries(self, tol: float = 1e-8):
        """Boolean mask over y22 of entries the data cannot pin down.

        Any symmetric W added to Y11 shifts Y22 by X^T W X, so exactly the
        entries (i, j) with both columns of X nonzero are ambiguous; the
        recovered values there reflect the sparsity prior, not the data.
        """
        r = self.y22.shape[0]
        touched = np.zeros(r, dtype=bool)
        if self.X.size:
            touched = np.abs(self.X).max(axis=0) > tol * max(np.abs(self.X).max(), 1e-300)
        return np.outer(touched, touched)

    def y22_matrix(self) -> AdmittanceMatrix:
        return AdmittanceMatrix.from_dense(self.y22, self.trusted_terminals())

    def full_matrix(self) -> AdmittanceMatrix:
        """Reassemble all blocks in the original terminal order."""
        n = len(self.terminals)
        D = np.zeros((n, n), dtype=complex)
        dep, bas = self.dependent, self.basis
        if dep.size:
            D[np.ix_(dep, dep)] = self.y11
            D[np.ix_(dep, bas)] = self.y12
            D[np.ix_(bas, dep)] = self.y12.T
        D[np.ix_(bas, bas)] = self.y22
        return AdmittanceMatrix.from_dense(D, self.terminals)


def lowrank_identify(ds: PhasorDataset, method: str = "adaptive",
                     lam="auto", gamma="auto", basis_tol: float = 1e-8,
                     lam_grid=None, gamma_grid=None, folds: int = 3,
                     **solver_kwargs) -> PartialIdentification:
    """Identify as much of the admittance matrix as the data permits.

    Full-rank voltage data degenerates to the well-posed solve with every
    terminal in the trusted set.
    """
    sel = select_basis(ds.V, basis_tol)
    if sel.dependent.size == 0:
        x, diagnostics = _solve_ohm(ds.V, ds.I, method, lam, gamma,
                                    lam_grid, gamma_grid, folds, solver_kwargs)
        y22 = symvec.f_unvec(x)
        return PartialIdentification(
            terminals=ds.terminals, basis=sel.basis, dependent=sel.dependent,
            perm=sel.perm, rank=sel.rank, X=np.zeros((0, sel.rank), dtype=complex),
            C=y22.copy(), y11=np.zeros((0, 0), dtype=complex),
            y12=np.zeros((0, sel.rank), dtype=complex), y22=y22,
            trust={"y22": True, "y11": True, "y12": True},
            basis_residual=0.0, diagnostics=diagnostics,
        )

    V1, V2 = ds.V[sel.dependent], ds.V[sel.basis]
    I1, I2 = ds.I[sel.dependent], ds.I[sel.basis]
    X = estimate_basis_coeff(V1, V2)
    basis_residual = float(
        np.linalg.norm(V1 - X @ V2, "fro") / max(np.linalg.norm(V1, "fro"), 1e-300)
    )
    C = constant_matrix(X, V1, V2, I1, I2)
    y11, y22, diagnostics = recover_y22_y11(
        X, C, method=method, lam=lam, gamma=gamma, cv_data=(V1, V2, I1, I2),
        lam_grid=lam_grid, gamma_grid=gamma_grid, folds=folds, **solver_kwargs,
    )
    y12 = recover_y12(X, y22, I2, V2)
    return PartialIdentification(
        terminals=ds.terminals, basis=sel.basis, dependent=sel.dependent,
        perm=sel.perm, rank=sel.rank, X=X, C=C, y11=y11, y12=y12, y22=y22,
        trust={"y22": True, "y11": False, "y12": False},
        basis_residual=basis_residual, diagnostics=diagnostics,
    )


# ------------------------------------------------------------------ metrics

def _dense(M):
    return M.to_dense() if isinstance(M, AdmittanceMatrix) else np.asarray(M, dtype=complex)


def error_metrics(y_hat, y_true):
    """(M1, M2): entry-wise l1 of moduli and Frobenius norm of the error."""
    A, B = _dense(y_hat), _dense(y_true)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    diff = A - B
    return float(np.sum(np.abs(diff))), float(np.linalg.norm(diff, "fro"))
