"""Sparse storage, linear solvers and extreme-eigenvalue estimates.

CSR storage is scipy.sparse; the CG solver, the lumped mass and the
power/inverse-iteration condition estimate are implemented here.
"""

from __future__ import annotations

import logging
import warnings
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_LU_MAX = 20_000
AUTO_DENSE_MAX = 5_000


class SolverError(RuntimeError):
    pass


class TripletBuffer:
    """Accumulates (row, col, value) arrays; duplicates are summed on compression."""

    def __init__(self, shape: tuple[int, int]):
        self.shape = shape
        self._rows: list[np.ndarray] = []
        self._cols: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, rows, cols, vals) -> None:
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float))
        self._rows.append(rows.ravel())
        self._cols.append(cols.ravel())
        self._vals.append(vals.ravel())

    def add_local(self, row_dofs: np.ndarray, col_dofs: np.ndarray, local: np.ndarray) -> None:
        """Scatter local blocks ``local`` (m, a, b) on dofs (m, a) x (m, b)."""
        self.add(row_dofs[:, :, None], col_dofs[:, None, :], local)

    def add_matrix(self, A: sp.spmatrix, row_offset: int = 0, col_offset: int = 0) -> None:
        C = A.tocoo()
        self.add(C.row + row_offset, C.col + col_offset, C.data)

    def compress(self, canonical: bool = False) -> sp.csr_matrix:
        if self._rows:
            r = np.concatenate(self._rows)
            c = np.concatenate(self._cols)
            v = np.concatenate(self._vals)
        else:
            r = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0)
        return compress(r, c, v, self.shape, canonical=canonical)


def compress(rows, cols, vals, shape: tuple[int, int], canonical: bool = False) -> sp.csr_matrix:
    """CSR matrix with duplicates summed and sorted column indices.

    With ``canonical`` duplicate values are summed in sorted order, which makes the
    result bitwise independent of insertion order.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= shape[0] or cols.max() >= shape[1]):
        raise IndexError("triplet index out of shape")
    if canonical and rows.size:
        order = np.lexsort((vals, cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        key = rows * shape[1] + cols
        start = np.flatnonzero(np.concatenate([[True], key[1:] != key[:-1]]))
        vals = np.add.reduceat(vals, start)
        rows, cols = rows[start], cols[start]
    A = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A: sp.spmatrix, tol: float = 1e-12) -> bool:
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    D = A - A.T
    return (abs(D).max() if D.nnz else 0.0) <= tol * scale


def lumped_mass(M: sp.spmatrix) -> sp.dia_matrix:
    M = sp.csr_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ValueError("mass matrix must be square")
    d = np.asarray(M.sum(axis=1)).ravel()
    scale = np.abs(M).sum(axis=1).max() if M.nnz else 1.0
    if np.any(d <= 1e-12 * scale):
        raise ValueError("nonpositive row sum: not a valid mass matrix for lumping")
    return sp.diags(d)


# ---------------------------------------------------------------- solvers


def cg(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-12, maxiter: int | None = None) -> tuple[np.ndarray, int]:
    """Jacobi-preconditioned conjugate gradients."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("CG needs a positive diagonal")
    dinv = 1.0 / d
    x = np.zeros(n)
    r = b.astype(float).copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= rtol * bnorm:
            # recompute the true residual to guard against drift
            r = b - A @ x
            if np.linalg.norm(r) <= rtol * bnorm:
                return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations")


class Factorization:
    """LU factorization (dense or sparse) reused for repeated solves.

    Sparse factorizations first try a symmetric ordering without pivoting on the
    pattern of A + A^T (far less fill); ``pivot=True`` forces partial pivoting.
    """

    def __init__(self, A: sp.spmatrix, method: str = "auto", pivot: bool = False):
        A = sp.csc_matrix(A)
        n = A.shape[0]
        if method == "auto":
            method = "lu" if n <= AUTO_DENSE_MAX else "splu"
        self.method = method
        self.pivoted = True
        if method == "lu":
            if n > DENSE_LU_MAX:
                raise ValueError(f"dense LU limited to n <= {DENSE_LU_MAX}, got {n}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(A.toarray(), check_finite=False)
            if np.any(np.diag(lu) == 0.0):
                raise SolverError("singular pivot in dense LU")
            self._lu = (lu, piv)
        elif method == "splu":
            self._lu = None
            if not pivot:
                try:
                    self._lu = spla.splu(
                        symmetric_pattern(A),
                        permc_spec="MMD_AT_PLUS_A",
                        diag_pivot_thresh=0.0,
                        options={"SymmetricMode": True},
                    )
                    self.pivoted = False
                except RuntimeError:
                    self._lu = None
            if self._lu is None:
                try:
                    self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
                except RuntimeError as exc:
                    raise SolverError(str(exc)) from exc
        else:
            raise ValueError(f"unknown factorization {method!r}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.method == "lu":
            return sla.lu_solve(self._lu, b, check_finite=False)
        return self._lu.solve(b)


def symmetric_pattern(A: sp.spmatrix) -> sp.csc_matrix:
    """A with explicit zeros added so that its sparsity pattern is symmetric."""
    C = sp.coo_matrix(A)
    rows = np.concatenate([C.row, C.col])
    cols = np.concatenate([C.col, C.row])
    vals = np.concatenate([C.data, np.zeros_like(C.data)])
    S = sp.csc_matrix((vals, (rows, cols)), shape=A.shape)
    S.sum_duplicates()
    return S


def structurally_symmetric(A: sp.spmatrix) -> bool:
    P = sp.csr_matrix(A, copy=True)
    P.data = np.ones_like(P.data)
    D = P - P.T
    D.eliminate_zeros()
    return D.nnz == 0


def residual_floor(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    """Rounding floor eps * || |A| |x| || / ||b|| of a relative residual computed in double."""
    bnorm = np.linalg.norm(b) or 1.0
    return float(np.finfo(float).eps * np.linalg.norm(abs(A) @ np.abs(x)) / bnorm)


def _refine(A, fac: Factorization, b: np.ndarray, rtol: float) -> tuple[np.ndarray, float, float]:
    """Solve with up to three refinement steps; returns (x, residual, target).

    The target is ``rtol`` unless the rounding floor of the residual itself is larger.
    """
    x = fac.solve(b)
    bnorm = np.linalg.norm(b) or 1.0
    target = max(rtol, residual_floor(A, x, b))
    for _ in range(3):
        r = b - A @ x
        if np.linalg.norm(r) <= target * bnorm:
            break
        x = x + fac.solve(r)
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, res, target


def solve(A: sp.spmatrix, b: np.ndarray, method: str = "auto", rtol: float = 1e-12) -> np.ndarray:
    """Solve ``A x = b``.

    ``method``: ``cg`` (symmetric only, Jacobi-preconditioned), ``lu`` (dense),
    ``splu`` (sparse LU) or ``auto`` (dense LU up to 5000 unknowns, sparse LU above).
    Direct solves get up to three steps of iterative refinement towards ``rtol``, or
    towards the rounding floor of the residual when that is larger.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(0)
    if method == "cg":
        if not is_symmetric(A):
            raise ValueError("CG requires a symmetric matrix")
        return cg(A, b, rtol=rtol)[0]
    fac = Factorization(A, method)
    x, res, target = _refine(A, fac, b, rtol)
    if res > target and not fac.pivoted:
        log.info("unpivoted factorization gave residual %.2e; refactoring with pivoting", res)
        x, res, target = _refine(A, Factorization(A, fac.method, pivot=True), b, rtol)
    if res > target:
        log.warning("relative residual %.2e above target %.1e", res, target)
    return x


# ---------------------------------------------------------------- spectra


def _power(apply, n: int, tol: float, maxiter: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(maxiter):
        y = apply(x)
        lam_new = float(x @ y)
        if lam_new <= 0.0:
            raise ValueError("matrix is not positive definite (nonpositive Rayleigh quotient)")
        ny = np.linalg.norm(y)
        x = y / ny
        if abs(lam_new - lam) <= tol * lam_new:
            return lam_new
        lam = lam_new
    return lam


def extreme_eigenvalues(A: sp.spmatrix, tol: float = 1e-12, maxiter: int = 200_000) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric positive definite matrix.

    lambda_max by power iteration, lambda_min by inverse iteration with an LU solve.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    lmax = _power(lambda x: A @ x, n, tol, maxiter)
    fac = Factorization(A, "lu" if n <= DENSE_LU_MAX else "splu")
    mu = _power(fac.solve, n, tol, maxiter, seed=1)
    return 1.0 / mu, lmax


def condition_number(A: sp.spmatrix, symmetric: bool = True, crosscheck_max: int = 2000) -> float:
    """Spectral condition number lambda_max / lambda_min of an SPD matrix."""
    A = sp.csr_matrix(A)
    if symmetric and not is_symmetric(A, 1e-10):
        raise ValueError("matrix flagged symmetric is not")
    if not symmetric:
        # 2-norm condition: largest singular values of A and of its inverse
        s = spla.svds(A, k=1, which="LM", return_singular_vectors=False)[0]
        fac = Factorization(A)
        At = Factorization(A.T.tocsr())
        inv = spla.LinearOperator(A.shape, matvec=fac.solve, rmatvec=At.solve)
        smax_inv = spla.svds(inv, k=1, which="LM", return_singular_vectors=False)[0]
        return float(s * smax_inv)
    lmin, lmax = extreme_eigenvalues(A)
    kappa = lmax / lmin
    if A.shape[0] <= crosscheck_max:
        ev = np.linalg.eigvalsh(A.toarray())
        if ev[0] <= 0:
            log.warning("dense eigensolver reports lambda_min=%.3e <= 0", ev[0])
        else:
            dense = ev[-1] / ev[0]
            if kappa < 1e10 and abs(dense - kappa) > 1e-6 * dense:
                log.warning("condition number mismatch: iterative %.8e vs dense %.8e", kappa, dense)
    return float(kappa)


# ---------------------------------------------------------------- export


def write_matrix_market(path: str | Path, A: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def read_matrix_market(path: str | Path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))
