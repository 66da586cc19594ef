"""Bingham belief extraction and dispersion-based OOD thresholding.

A symmetric 4x4 matrix A encodes an antipodally symmetric belief over
unit quaternions: the mode is the minimum eigenvector of A and the
nonpositive dispersion coefficients are recovered from the eigenvalue
gaps, d_i = lambda1 - lambda_{5-i}. Adding c*I to A leaves the belief
unchanged.

The dispersion trace 3*lambda1 - lambda2 - lambda3 - lambda4 (= sum of
dispersions) serves as an uncertainty score: strongly negative means a
concentrated, confident belief; values near zero flag inputs far from
the training distribution. Thresholding it at a training-set quantile
("dispersion thresholding") rejects out-of-distribution inputs.
"""

from dataclasses import dataclass

import numpy as np

from .so3 import canonicalize_quat
from .symrep import DEFAULT_GAP_TOL, DegenerateEigenspace, symeig4


@dataclass(frozen=True)
class BinghamBelief:
    """Orthogonal axes matrix and dispersion coefficients.

    axes: 4x4 orthogonal; columns 0..2 are dispersion axes matching
          dispersions[0..2], column 3 is the mode (canonical sign).
    dispersions: (d1, d2, d3) with d1 <= d2 <= d3 <= 0.
    """

    axes: np.ndarray
    dispersions: np.ndarray

    @property
    def mode(self):
        return self.axes[:, 3]


def belief_from_A(A, gap_tol=DEFAULT_GAP_TOL):
    """Diagonalize -A into a Bingham belief.

    Requires a simple minimum eigenvalue of A so the mode is unique.
    """
    A = np.asarray(A, dtype=float)
    if A.shape != (4, 4):
        raise ValueError(f"belief_from_A expects a single (4, 4) matrix, got {A.shape}")
    dec = symeig4(A)
    gap = float(dec.eigengap)
    scale = max(1.0, float(np.linalg.norm(A)))
    if gap < gap_tol * scale:
        raise DegenerateEigenspace(
            f"mode is not unique (gap {gap:.3e} < {gap_tol:.1e} * {scale:.3e})")
    lams, V = dec.lambdas, dec.vectors
    dispersions = np.array([lams[0] - lams[3], lams[0] - lams[2], lams[0] - lams[1]])
    mode = canonicalize_quat(V[:, 0])
    axes = np.stack([V[:, 3], V[:, 2], V[:, 1], mode], axis=-1)
    return BinghamBelief(axes=axes, dispersions=dispersions)


def log_density_unnorm(belief, x):
    """Log of the unnormalized Bingham density, sum_i d_i (d_i . x)^2.

    Zero at the mode (and its antipode), <= 0 everywhere on the sphere.
    """
    x = np.asarray(x, dtype=float)
    proj = x @ belief.axes[:, :3]
    return float(np.sum(belief.dispersions * proj * proj))


def dispersion_trace(A):
    """Uncertainty score 3*lambda1 - lambda2 - lambda3 - lambda4 (<= 0).

    Equals the sum of the belief's dispersion coefficients; invariant
    under A -> A + c*I. Broadcasts over leading batch dimensions.
    """
    lams = symeig4(A).lambdas
    return 3.0 * lams[..., 0] - lams[..., 1] - lams[..., 2] - lams[..., 3]


def dt_fit(train_traces, q):
    """Threshold = q-quantile (linear interpolation) of the training traces."""
    traces = np.asarray(train_traces, dtype=float).ravel()
    if traces.size == 0:
        raise ValueError("dt_fit requires a nonempty list of traces")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"quantile q must be in (0, 1], got {q}")
    return float(np.quantile(traces, q, method="linear"))


def dt_classify(trace, threshold):
    """Keep (return True) iff trace <= threshold; boundary inclusive."""
    return np.asarray(trace, dtype=float) <= threshold
