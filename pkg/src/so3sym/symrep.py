"""Symmetric-matrix rotation representation and its differentiable solver.

A rotation is encoded by a symmetric 4x4 matrix A, parameterized by a
10-vector theta filling the upper triangle row by row. The rotation is
read out as the minimum eigenvector of A (a unit quaternion, defined up
to sign), which is the solution of min_q q^T A q subject to ||q|| = 1.
The map is differentiable wherever the minimum eigenvalue is simple, with
the analytic Jacobian dq*/dvec(A) = q*^T kron pinv(lambda1 I - A) in
column-major vec convention.

The eigensolver is a cyclic Jacobi iteration specialized to 4x4 symmetric
matrices; it broadcasts over leading batch dimensions and is fully
deterministic (fixed pivot order, per-matrix masked rotations).
"""

from dataclasses import dataclass

import numpy as np

from .so3 import canonicalize_quat

# Pivot order for one Jacobi sweep.
_PIVOTS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]

# Off-diagonal Frobenius tolerance (relative to ||A||_F) and sweep cap.
_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 64

# (row, col) of the upper triangle addressed by each theta entry, row-major.
_THETA_POS = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]

DEFAULT_GAP_TOL = 1e-8


class DegenerateEigenspace(RuntimeError):
    """Minimum eigenvalue is not simple: the rotation readout is not unique."""


class EigenConvergenceError(RuntimeError):
    """Jacobi iteration failed to converge (pathological or non-finite input)."""


@dataclass(frozen=True)
class EigenDecomp4:
    """Eigendecomposition of a symmetric 4x4 matrix (batched over leading dims).

    lambdas: (..., 4) ascending eigenvalues.
    vectors: (..., 4, 4) orthonormal columns, vectors[..., :, i] for lambdas[..., i],
             sign-canonicalized so each column's largest-magnitude entry is positive.
    """

    lambdas: np.ndarray
    vectors: np.ndarray

    @property
    def eigengap(self):
        return self.lambdas[..., 1] - self.lambdas[..., 0]


def theta_to_A(theta):
    """10-vector -> symmetric 4x4 matrix (row-major upper-triangle fill)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != 10:
        raise ValueError(f"theta must have trailing dimension 10, got {theta.shape}")
    A = np.zeros(theta.shape[:-1] + (4, 4))
    for k, (i, j) in enumerate(_THETA_POS):
        A[..., i, j] = theta[..., k]
        A[..., j, i] = theta[..., k]
    return A


def A_to_theta(A):
    """Symmetric 4x4 matrix -> 10-vector; exact inverse of theta_to_A."""
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (4, 4):
        raise ValueError(f"A must have trailing shape (4, 4), got {A.shape}")
    return np.stack([A[..., i, j] for i, j in _THETA_POS], axis=-1)


def _check_symmetric(A):
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (4, 4):
        raise ValueError(f"expected trailing shape (4, 4), got {A.shape}")
    scale = np.maximum(np.abs(A).max(axis=(-2, -1)), 1.0)
    skew = np.abs(A - np.swapaxes(A, -1, -2)).max(axis=(-2, -1))
    if np.any(skew > 1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def symeig4(A, max_sweeps=_JACOBI_MAX_SWEEPS):
    """Eigendecompose symmetric 4x4 matrices by cyclic Jacobi rotations.

    Accepts (..., 4, 4); deterministic for fixed input regardless of what
    else shares the batch (rotations are masked off per matrix once its
    off-diagonal mass is negligible). Raises EigenConvergenceError if the
    off-diagonal norm does not fall below 1e-14 * ||A||_F in max_sweeps.
    """
    A = _check_symmetric(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    batch_shape = A.shape[:-2]
    B = A.reshape((-1, 4, 4)).copy()
    n = B.shape[0]
    V = np.broadcast_to(np.eye(4), (n, 4, 4)).copy()
    fro = np.linalg.norm(B.reshape(n, 16), axis=-1)
    # Pivot threshold low enough that all-masked implies converged.
    pivot_thr = (_JACOBI_TOL / 3.0) * fro

    def offdiag_ok():
        off = B.copy()
        off[:, range(4), range(4)] = 0.0
        onorm = np.linalg.norm(off.reshape(n, 16), axis=-1)
        return onorm <= _JACOBI_TOL * np.maximum(fro, 1e-300)

    converged = False
    for _ in range(max_sweeps):
        if np.all(offdiag_ok()):
            converged = True
            break
        for p, q in _PIVOTS:
            apq = B[:, p, q]
            mask = np.abs(apq) > pivot_thr
            if not mask.any():
                continue
            app, aqq = B[:, p, p], B[:, q, q]
            apq_safe = np.where(mask, apq, 1.0)
            tau = (aqq - app) / (2.0 * apq_safe)
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            c = np.where(mask, c, 1.0)[:, None]
            s = np.where(mask, s, 0.0)[:, None]
            # Two-sided Givens update B <- J^T B J, J = I with
            # J[p,p]=c, J[q,q]=c, J[p,q]=s, J[q,p]=-s; then V <- V J.
            bp = B[:, :, p].copy()
            bq = B[:, :, q].copy()
            B[:, :, p] = c * bp - s * bq
            B[:, :, q] = s * bp + c * bq
            bp = B[:, p, :].copy()
            bq = B[:, q, :].copy()
            B[:, p, :] = c * bp - s * bq
            B[:, q, :] = s * bp + c * bq
            B[:, p, q] = np.where(mask, 0.0, B[:, p, q])
            B[:, q, p] = B[:, p, q]
            vp = V[:, :, p].copy()
            vq = V[:, :, q].copy()
            V[:, :, p] = c * vp - s * vq
            V[:, :, q] = s * vp + c * vq
    else:
        converged = bool(np.all(offdiag_ok()))
    if not converged:
        raise EigenConvergenceError(f"Jacobi sweep cap {max_sweeps} reached without convergence")

    lams = B[:, range(4), range(4)]
    order = np.argsort(lams, axis=-1, kind="stable")
    lams = np.take_along_axis(lams, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    # Canonical eigenvector sign: largest-magnitude component positive.
    idx = np.argmax(np.abs(V), axis=1)
    picked = np.take_along_axis(V, idx[:, None, :], axis=1)[:, 0, :]
    V = V * np.where(picked < 0, -1.0, 1.0)[:, None, :]
    return EigenDecomp4(lams.reshape(batch_shape + (4,)), V.reshape(batch_shape + (4, 4)))


def qcqp_solve(A, gap_tol=DEFAULT_GAP_TOL):
    """Minimize q^T A q over unit quaternions for a single symmetric A.

    Returns (q_star, eigengap) with q_star in canonical sign. Raises
    DegenerateEigenspace when lambda2 - lambda1 < gap_tol * max(1, ||A||_F).
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (4, 4):
        raise ValueError(f"qcqp_solve expects a single (4, 4) matrix, got {A.shape}")
    dec = symeig4(A)
    gap = float(dec.eigengap)
    scale = max(1.0, float(np.linalg.norm(A)))
    if gap < gap_tol * scale:
        raise DegenerateEigenspace(
            f"minimum eigenvalue is not simple (gap {gap:.3e} < {gap_tol:.1e} * {scale:.3e})")
    q = canonicalize_quat(dec.vectors[:, 0])
    return q, gap


def pinv4_sym(M, rank_tol=1e-12):
    """Moore-Penrose pseudo-inverse of a symmetric 4x4 matrix.

    Eigenvalues with |lambda| <= rank_tol * max|lambda| are treated as zero.
    """
    M = np.asarray(M, dtype=float)
    dec = symeig4(M)
    lams, V = dec.lambdas, dec.vectors
    cutoff = rank_tol * np.abs(lams).max(axis=-1, keepdims=True)
    inv = np.where(np.abs(lams) > cutoff, 1.0 / np.where(lams == 0.0, 1.0, lams), 0.0)
    return (V * inv[..., None, :]) @ np.swapaxes(V, -1, -2)


def qcqp_jacobian(A, decomp=None, gap_tol=DEFAULT_GAP_TOL):
    """Analytic 4x16 Jacobian dq*/dvec(A), column-major vec.

    Rows index the canonical-sign minimum eigenvector q*; built as
    q*^T kron pinv(lambda1 I - A). Requires a simple minimum eigenvalue.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (4, 4):
        raise ValueError(f"qcqp_jacobian expects a single (4, 4) matrix, got {A.shape}")
    if decomp is None:
        decomp = symeig4(A)
    gap = float(decomp.eigengap)
    scale = max(1.0, float(np.linalg.norm(A)))
    if gap < gap_tol * scale:
        raise DegenerateEigenspace(
            f"minimum eigenvalue is not simple (gap {gap:.3e} < {gap_tol:.1e} * {scale:.3e})")
    q = canonicalize_quat(decomp.vectors[:, 0])
    lam1 = decomp.lambdas[0]
    # pinv(lambda1 I - A) = sum_{i>=2} v_i v_i^T / (lambda1 - lambda_i).
    V, lams = decomp.vectors, decomp.lambdas
    weights = np.zeros(4)
    weights[1:] = 1.0 / (lam1 - lams[1:])
    M = (V * weights) @ V.T
    return np.kron(q[None, :], M)


def theta_duplication_matrix():
    """16x10 matrix G with vec(theta_to_A(theta)) = G @ theta (column-major vec)."""
    G = np.zeros((16, 10))
    for k, (i, j) in enumerate(_THETA_POS):
        G[4 * j + i, k] = 1.0
        G[4 * i + j, k] = 1.0  # same slot when i == j
    return G


def qcqp_jacobian_theta(A, decomp=None, gap_tol=DEFAULT_GAP_TOL):
    """4x10 Jacobian dq*/dtheta: qcqp_jacobian chained through the theta layout."""
    J = qcqp_jacobian(A, decomp, gap_tol)
    return J @ theta_duplication_matrix()


def smooth_section(q):
    """Map a unit quaternion to the projector I - q q^T.

    The output has eigenvalues {0, 1, 1, 1} with minimum eigenspace
    span(q), so qcqp_solve recovers +/-q; invariant under q -> -q.
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternion must have trailing dimension 4, got {q.shape}")
    outer = q[..., :, None] * q[..., None, :]
    return np.eye(4) - outer
