"""Closed-form Wahba solver and the synthetic correspondence generator.

Given weighted vector pairs (u_i, v_i, sigma_i), the rotation minimizing
sum_i ||v_i - R u_i||^2 / sigma_i^2 is the minimum eigenvector of the
4x4 data matrix

    A = sum_i (1/sigma_i^2) [ (||u_i||^2 + ||v_i||^2) I + 2 Ml(v_i_hat) Mr(u_i_hat) ],

where hats homogenize 3-vectors into pure quaternions and Ml/Mr are the
left/right quaternion product matrices. For unit q, q^T A q equals the
residual sum exactly, so the QCQP layer solves the problem in closed form.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .so3 import exp_map, quat_left_matrix, quat_right_matrix
from .symrep import DEFAULT_GAP_TOL, qcqp_solve


@dataclass(frozen=True)
class Correspondences:
    """Weighted vector-pair set: u, v are (N, 3); sigma is (N,) with sigma > 0."""

    u: np.ndarray
    v: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).reshape(-1, 3)
        v = np.asarray(self.v, dtype=float).reshape(-1, 3)
        sigma = np.asarray(self.sigma, dtype=float).ravel()
        if not (len(u) == len(v) == len(sigma)):
            raise ValueError(
                f"length mismatch: u {len(u)}, v {len(v)}, sigma {len(sigma)}")
        if np.any(sigma <= 0):
            raise ValueError("all sigma must be > 0")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "sigma", sigma)

    def __len__(self):
        return len(self.u)


@dataclass(frozen=True)
class SyntheticConfig:
    """Generative model settings: v_i = R_hat u_i + eps, eps ~ N(0, sigma^2 I).

    num_matches: pairs per instance; u_i uniform on the unit sphere.
    sigma: noise standard deviation (>= 0).
    phi_max: rotation-angle cap in radians; angles drawn U[0, phi_max).
    seed: RNG seed when no generator is supplied.
    """

    num_matches: int
    sigma: float
    phi_max: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.phi_max <= np.pi:
            raise ValueError(f"phi_max must be in (0, pi], got {self.phi_max}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.num_matches < 1:
            raise ValueError(f"num_matches must be >= 1, got {self.num_matches}")


def rng_for(seed, *path):
    """Seeded PCG64 stream; extra integers split independent substreams.

    Stream rule: rng_for(seed, trial, batch) and rng_for(seed, trial, batch')
    are statistically independent for batch != batch'.
    """
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(p) for p in path)))


def _homogenize(p):
    return np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)


def build_data_matrix(c):
    """Assemble the symmetric 4x4 Wahba data matrix; empty input gives zeros."""
    if len(c) == 0:
        return np.zeros((4, 4))
    uh = _homogenize(c.u)
    vh = _homogenize(c.v)
    norms = np.sum(c.u * c.u, axis=-1) + np.sum(c.v * c.v, axis=-1)
    w = 1.0 / (c.sigma * c.sigma)
    terms = norms[:, None, None] * np.eye(4) + 2.0 * quat_left_matrix(vh) @ quat_right_matrix(uh)
    A = np.sum(w[:, None, None] * terms, axis=0)
    return 0.5 * (A + A.T)


def solve_wahba(c, gap_tol=DEFAULT_GAP_TOL):
    """Optimal unit quaternion (canonical sign) for the correspondence set.

    Raises DegenerateEigenspace when the observations do not pin down a
    unique rotation (e.g. all u collinear).
    """
    q, _ = qcqp_solve(build_data_matrix(c), gap_tol=gap_tol)
    return q


def sample_unit_sphere(n, rng):
    """n points uniform on S^2 via normalized 3-D Gaussians."""
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def sample_rotation(phi_max, rng):
    """Rotation with angle U[0, phi_max) about a Gaussian-random axis."""
    a = rng.standard_normal(3)
    a = a / np.linalg.norm(a)
    phi = rng.uniform(0.0, phi_max)
    return exp_map(phi * a)


def sample_synthetic(cfg, rng=None):
    """Draw (R_hat, correspondences) from the generative model.

    Deterministic for a fixed cfg.seed when rng is omitted. Per-pair sigma
    is cfg.sigma, or 1.0 in the noiseless case (weights must stay positive;
    uniform weights do not change the optimum).
    """
    if rng is None:
        rng = rng_for(cfg.seed)
    R_hat = sample_rotation(cfg.phi_max, rng)
    u = sample_unit_sphere(cfg.num_matches, rng)
    v = u @ R_hat.T
    if cfg.sigma > 0:
        v = v + cfg.sigma * rng.standard_normal(v.shape)
    sigma = np.full(cfg.num_matches, cfg.sigma if cfg.sigma > 0 else 1.0)
    return R_hat, Correspondences(u=u, v=v, sigma=sigma)


CSV_FIELDS = ["ux", "uy", "uz", "vx", "vy", "vz", "sigma"]


class CorrespondenceParseError(ValueError):
    """Raised with a 1-based line number when a correspondence CSV is malformed."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_correspondences_csv(path):
    """Parse a correspondence CSV (header ux,uy,uz,vx,vy,vz,sigma)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [f.strip() for f in row]
                if header != CSV_FIELDS:
                    raise CorrespondenceParseError(
                        lineno, f"expected header {','.join(CSV_FIELDS)}, got {','.join(header)}")
                continue
            if len(row) != 7:
                raise CorrespondenceParseError(lineno, f"expected 7 columns, got {len(row)}")
            try:
                vals = [float(f) for f in row]
            except ValueError as exc:
                raise CorrespondenceParseError(lineno, str(exc)) from None
            if vals[6] <= 0:
                raise CorrespondenceParseError(lineno, f"sigma must be > 0, got {vals[6]}")
            rows.append(vals)
        if header is None:
            raise CorrespondenceParseError(1, "missing header row")
    data = np.array(rows, dtype=float).reshape(-1, 7)
    return Correspondences(u=data[:, 0:3], v=data[:, 3:6], sigma=data[:, 6])


def write_correspondences_csv(path, c):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for i in range(len(c)):
            writer.writerow([repr(float(x)) for x in (*c.u[i], *c.v[i], c.sigma[i])])
