"""Shared test oracles, kept independent of the library code paths they check."""

import numpy as np

from so3sym import so3


def random_rotations(n, rng):
    """Uniform rotations via normalized Gaussian quaternions."""
    q = so3.random_quats(n, rng)
    return so3.quat_to_rot(q), q


def hamilton_reference(q1, q2):
    """Hamilton product evaluated component by component (scalar-last)."""
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])


def kabsch(u, v, sigma=None):
    """Orthogonal-Procrustes rotation minimizing sum ||v - R u||^2 / sigma^2."""
    w = np.ones(len(u)) if sigma is None else 1.0 / np.asarray(sigma) ** 2
    B = np.einsum("n,ni,nj->ij", w, v, u)
    U, _, Vt = np.linalg.svd(B)
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def charpoly_coeffs(A):
    """Coefficients of det(lambda I - A) by Faddeev-LeVerrier, batched.

    Returns (B, 5): p(lambda) = l^4 + c1 l^3 + c2 l^2 + c3 l + c4.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    B = A.shape[0]
    eye = np.broadcast_to(np.eye(4), A.shape)
    coeffs = np.empty((B, 5))
    coeffs[:, 0] = 1.0
    M = np.zeros_like(A)
    c = np.ones(B)
    for k in range(1, 5):
        M = A @ (M + c[:, None, None] * eye)
        c = -np.trace(M, axis1=-2, axis2=-1) / k
        coeffs[:, k] = c
    return coeffs


def _polyval(coeffs, x):
    out = np.zeros_like(x)
    for k in range(coeffs.shape[-1]):
        out = out * x + coeffs[..., k]
    return out


def _polyder(coeffs):
    n = coeffs.shape[-1] - 1
    powers = np.arange(n, 0, -1)
    return coeffs[..., :-1] * powers


def _bisect(coeffs, lo, hi, iters=120):
    """Per-row bisection for a root of the polynomial in [lo, hi]."""
    flo = _polyval(coeffs, lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = _polyval(coeffs, mid)
        same = np.sign(fm) == np.sign(flo)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fm, flo)
        hi = np.where(same, hi, mid)
    return 0.5 * (lo + hi)


def eig4_bisection_oracle(A):
    """Eigenvalues of symmetric 4x4 matrices by characteristic-polynomial
    bisection: critical points of p bracket its roots, recursively down to
    the quadratic p'' solved in closed form. Batched; returns (B, 4) ascending.
    """
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    if single:
        A = A[None]
    p = charpoly_coeffs(A)
    dp = _polyder(p)          # cubic
    ddp = _polyder(dp)        # quadratic: 12 l^2 + 6 c1 l + 2 c2
    a, b, c = ddp[:, 0], ddp[:, 1], ddp[:, 2]
    disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
    r1 = (-b - disc) / (2 * a)
    r2 = (-b + disc) / (2 * a)
    bound = 1.0 + np.linalg.norm(A.reshape(len(A), 16), axis=-1)
    lo, hi = -bound, bound
    s1 = _bisect(dp, lo, r1)
    s2 = _bisect(dp, r1, r2)
    s3 = _bisect(dp, r2, hi)
    roots = np.stack([
        _bisect(p, lo, s1),
        _bisect(p, s1, s2),
        _bisect(p, s2, s3),
        _bisect(p, s3, hi),
    ], axis=-1)
    roots = np.sort(roots, axis=-1)
    return roots[0] if single else roots


def super_fibonacci(n):
    """n low-discrepancy points on S^3 (deterministic spiral lattice)."""
    phi = np.sqrt(2.0)
    psi = 1.533751168755204288118041
    i = np.arange(n) + 0.5
    s = i / n
    r = np.sqrt(s)
    R = np.sqrt(1.0 - s)
    alpha = 2 * np.pi * i / phi
    beta = 2 * np.pi * i / psi
    return np.stack([r * np.sin(alpha), r * np.cos(alpha),
                     R * np.sin(beta), R * np.cos(beta)], axis=-1)


# Measured covering radius of the 1e5-point grid is ~4.8 deg (rotation-angle
# metric); 6 deg gives slack for the argmin displacement of smooth costs.
GRID_RESOLUTION_RAD = np.deg2rad(6.0)


def chordal_cost_at(q_candidates, quats, weights=None):
    """Brute-force weighted chordal cost via rotation matrices (no shortcuts)."""
    w = np.ones(len(quats)) if weights is None else np.asarray(weights, dtype=float)
    R_c = so3.quat_to_rot(np.asarray(q_candidates))
    R_i = so3.quat_to_rot(np.asarray(quats))
    diff = R_c[:, None, :, :] - R_i[None, :, :, :]
    return np.einsum("n,cnij->c", w, diff * diff)
