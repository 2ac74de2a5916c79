"""Dense symmetric eigendecomposition by cyclic Jacobi rotations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from macrolocal.errors import ContractError

SYMMETRY_TOL = 1e-12
OFFDIAG_TOL = 1e-12
MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # columns are eigenvectors

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _check_symmetric(matrix: np.ndarray) -> np.ndarray:
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise ContractError("matrix is not symmetric")
    return (a + a.T) / 2.0


def sym_eig(matrix) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix.

    Cyclic Jacobi sweeps over the upper triangle in row-major order until
    the off-diagonal Frobenius norm drops below ``1e-12 * ||A||_F``.
    """
    a = _check_symmetric(matrix)
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n == 0 or norm == 0.0:
        return EigenDecomposition(np.zeros(n), v)
    target = OFFDIAG_TOL * norm
    for _ in range(MAX_SWEEPS):
        if np.linalg.norm(a - np.diag(np.diag(a))) <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q]
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return EigenDecomposition(values[order], v[:, order])


def psd_project(matrix, eig=sym_eig) -> np.ndarray:
    """Frobenius-nearest positive semidefinite matrix (negative eigenvalues clamped)."""
    dec = eig(matrix)
    clamped = np.clip(dec.values, 0.0, None)
    out = (dec.vectors * clamped) @ dec.vectors.T
    return (out + out.T) / 2.0


def min_eigenvalue(matrix) -> float:
    dec = sym_eig(matrix)
    return float(dec.values[0]) if dec.values.size else 0.0


def gram_vectors(matrix, eig=sym_eig) -> np.ndarray:
    """Rows ``w_k`` with ``w_k . w_l = M_kl`` for a PSD ``M`` (eigen square root).

    Small negative eigenvalues from round-off are clamped to zero.
    """
    dec = eig(matrix)
    root = np.sqrt(np.clip(dec.values, 0.0, None))
    return dec.vectors * root
