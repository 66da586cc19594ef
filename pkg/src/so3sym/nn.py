"""Dense rotation regressor with hand-written reverse-mode gradients.

The network maps flattened correspondence pairs (u_i, v_i) to a raw head
input, which one of three interchangeable heads turns into a rotation:

- "quat": normalize a 4-vector onto the unit sphere;
- "6d":   Gram-Schmidt two 3-vectors into a rotation matrix;
- "A":    fill a symmetric 4x4 matrix from a 10-vector and extract its
          minimum eigenvector through the differentiable QCQP layer
          (this head also exposes a dispersion trace per sample).

Losses (squared quaternion, chordal, angular distances), Adam, and the
synthetic training protocol live here as well. Everything is plain numpy
and deterministic for a fixed seed; batches broadcast over the leading
dimension.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import so3
from .symrep import DEFAULT_GAP_TOL, theta_to_A, symeig4, _THETA_POS
from .wahba import rng_for

HEADS = ("quat", "6d", "A")
LOSSES = ("quat", "chord", "ang")
HEAD_DIMS = {"quat": 4, "6d": 6, "A": 10}

LEAKY_SLOPE = 0.01

# Substream tags hung off (seed, trial) for independent draws.
_STREAM_INIT = 0
_STREAM_LR = 1
_STREAM_TEST = 2
_STREAM_TRAIN = 3


# ---------------------------------------------------------------------------
# Dense network


@dataclass
class DenseNet:
    """Fully-connected net; weights[l] is (d_out, d_in), activations per layer."""

    weights: list
    biases: list
    activations: list

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def set_params(self, params):
        n = len(self.weights)
        for l in range(n):
            self.weights[l] = params[2 * l]
            self.biases[l] = params[2 * l + 1]


def init_net(in_dim, hidden_widths, out_dim, rng):
    """Uniform fan-in initialization, hidden layers leaky-ReLU, output linear."""
    dims = [in_dim, *hidden_widths, out_dim]
    weights, biases, acts = [], [], []
    for l in range(len(dims) - 1):
        s = 1.0 / np.sqrt(dims[l])
        weights.append(rng.uniform(-s, s, size=(dims[l + 1], dims[l])))
        biases.append(rng.uniform(-s, s, size=dims[l + 1]))
        acts.append("linear" if l == len(dims) - 2 else "leaky_relu")
    return DenseNet(weights, biases, acts)


def _act(z, kind):
    if kind == "linear":
        return z
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(z, kind):
    if kind == "linear":
        return np.ones_like(z)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    raise ValueError(f"unknown activation {kind!r}")


def forward(net, x):
    """Run the net; returns (raw, cache) with what backward needs.

    x is (in_dim,) or (B, in_dim); raw matches the leading shape.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.in_dim:
        raise ValueError(f"input dim {a.shape[1]} != net input dim {net.in_dim}")
    cache = []
    for W, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ W.T + b
        cache.append((a, z, act))
        a = _act(z, act)
    return (a[0] if single else a), cache


def backward(net, cache, grad_raw):
    """Backpropagate grad wrt raw output; returns [(dW, db), ...] per layer."""
    g = np.asarray(grad_raw, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    grads = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        a_prev, z, act = cache[l]
        g = g * _act_grad(z, act)
        grads[l] = (g.T @ a_prev, g.sum(axis=0))
        g = g @ net.weights[l]
    return grads


# ---------------------------------------------------------------------------
# Representation heads


@dataclass(frozen=True)
class HeadOutput:
    """Rotation readout of a head: matrix, quaternion, and (A head only) trace."""

    R: np.ndarray
    q: np.ndarray
    trace: float = None


def _rot_jacobian_tensor(q):
    """d quat_to_rot / d q as (..., 3, 3, 4), ambient polynomial derivative."""
    x, y, z, w = (q[..., i] for i in range(4))
    o = np.zeros_like(x)
    dx = [[o, 2 * y, 2 * z], [2 * y, -4 * x, -2 * w], [2 * z, 2 * w, -4 * x]]
    dy = [[-4 * y, 2 * x, 2 * w], [2 * x, o, 2 * z], [-2 * w, 2 * z, -4 * y]]
    dz = [[-4 * z, -2 * w, 2 * x], [2 * w, -4 * z, 2 * y], [2 * x, 2 * y, o]]
    dw = [[o, -2 * z, 2 * y], [2 * z, o, -2 * x], [-2 * y, 2 * x, o]]
    parts = [np.stack([np.stack(r, axis=-1) for r in d], axis=-2) for d in (dx, dy, dz, dw)]
    return np.stack(parts, axis=-1)


def _grad_R_to_grad_q(q, grad_R):
    return np.einsum("...ijk,...ij->...k", _rot_jacobian_tensor(q), grad_R)


def _quat_head_forward(raw, eps=1e-9):
    raw = np.asarray(raw, dtype=float)
    n = np.linalg.norm(raw, axis=-1)
    valid = n > eps
    q = raw / np.where(valid, n, 1.0)[..., None]
    q = np.where(valid[..., None], q, np.array([0.0, 0.0, 0.0, 1.0]))
    return q, so3.quat_to_rot(q), valid


def _quat_head_backward(raw, grad_q):
    raw = np.asarray(raw, dtype=float)
    n = np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), 1e-30)
    q = raw / n
    # d(y/||y||) = (I - q q^T) / ||y||
    return (grad_q - q * np.sum(q * grad_q, axis=-1, keepdims=True)) / n


def _sixd_head_forward(raw, eps=1e-9):
    raw = np.asarray(raw, dtype=float)
    a1, a2 = raw[..., :3], raw[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    b1 = a1 / np.where(n1 > eps, n1, 1.0)[..., None]
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1)
    valid = (n1 > eps) & (n2 > eps)
    b2 = u2 / np.where(n2 > eps, n2, 1.0)[..., None]
    b3 = np.cross(b1, b2)
    R = np.stack([b1, b2, b3], axis=-1)
    R = np.where(valid[..., None, None], R, np.eye(3))
    return R, valid


def _sixd_head_backward(raw, grad_R):
    raw = np.asarray(raw, dtype=float)
    a1, a2 = raw[..., :3], raw[..., 3:]
    n1 = np.maximum(np.linalg.norm(a1, axis=-1, keepdims=True), 1e-30)
    b1 = a1 / n1
    p = np.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - p * b1
    n2 = np.maximum(np.linalg.norm(u2, axis=-1, keepdims=True), 1e-30)
    b2 = u2 / n2

    g1 = grad_R[..., :, 0]
    g2 = grad_R[..., :, 1]
    g3 = grad_R[..., :, 2]
    # b3 = b1 x b2: <g3, db1 x b2> = <b2 x g3, db1>, <g3, b1 x db2> = <g3 x b1, db2>
    gb1 = g1 + np.cross(b2, g3)
    gb2 = g2 + np.cross(g3, b1)
    # b2 = u2/||u2||
    gu2 = (gb2 - b2 * np.sum(b2 * gb2, axis=-1, keepdims=True)) / n2
    # u2 = a2 - (b1.a2) b1
    ga2 = gu2 - b1 * np.sum(b1 * gu2, axis=-1, keepdims=True)
    gb1 = gb1 - a2 * np.sum(b1 * gu2, axis=-1, keepdims=True) - p * gu2
    # b1 = a1/||a1||
    ga1 = (gb1 - b1 * np.sum(b1 * gb1, axis=-1, keepdims=True)) / n1
    return np.concatenate([ga1, ga2], axis=-1)


def _sym_head_forward(raw, gap_tol=DEFAULT_GAP_TOL):
    """theta -> (q*, R, trace, decomp, valid). Invalid where the gap closes."""
    theta = np.asarray(raw, dtype=float)
    A = theta_to_A(theta)
    dec = symeig4(A)
    lams = dec.lambdas
    fro = np.linalg.norm(A.reshape(A.shape[:-2] + (16,)), axis=-1)
    valid = dec.eigengap >= gap_tol * np.maximum(1.0, fro)
    q = so3.canonicalize_quat(np.swapaxes(dec.vectors, -1, -2)[..., 0, :])
    q = np.where(valid[..., None], q, np.array([0.0, 0.0, 0.0, 1.0]))
    trace = 3.0 * lams[..., 0] - lams[..., 1] - lams[..., 2] - lams[..., 3]
    return q, so3.quat_to_rot(q), trace, dec, valid


def _sym_head_backward(dec, q, grad_q):
    """Vector-Jacobian product through the QCQP layer, batched.

    grad wrt A is (pinv(lambda1 I - A) grad_q) q*^T; theta entries then
    accumulate their one or two symmetric matrix positions.
    """
    lams, V = dec.lambdas, dec.vectors
    denom = lams[..., :1] - lams[..., 1:]  # negative: lambda1 - lambda_i
    denom = np.where(denom == 0.0, -1.0, denom)  # degenerate rows get masked upstream
    weights = np.concatenate([np.zeros_like(denom[..., :1]), 1.0 / denom], axis=-1)
    Mg = np.einsum("...ik,...k,...jk,...j->...i", V, weights, V, grad_q)
    grad_A = Mg[..., :, None] * q[..., None, :]
    cols = []
    for i, j in _THETA_POS:
        if i == j:
            cols.append(grad_A[..., i, i])
        else:
            cols.append(grad_A[..., i, j] + grad_A[..., j, i])
    return np.stack(cols, axis=-1)


def head_forward(head, raw, gap_tol=DEFAULT_GAP_TOL):
    """Single-sample head evaluation; raises on degenerate inputs."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (HEAD_DIMS[head],):
        raise ValueError(f"head {head!r} expects a {HEAD_DIMS[head]}-vector, got {raw.shape}")
    if head == "quat":
        q, R, valid = _quat_head_forward(raw)
        if not valid:
            raise ValueError("quat head input has near-zero norm")
        return HeadOutput(R=R, q=q)
    if head == "6d":
        R = so3.sixd_to_rot(raw)
        return HeadOutput(R=R, q=so3.rot_to_quat(R))
    if head == "A":
        q, R, trace, dec, valid = _sym_head_forward(raw, gap_tol)
        if not valid:
            from .symrep import DegenerateEigenspace
            raise DegenerateEigenspace("predicted A has a non-simple minimum eigenvalue")
        return HeadOutput(R=R, q=q, trace=float(trace))
    raise ValueError(f"unknown head {head!r}")


def head_backward(head, raw, grad_q=None, grad_R=None, gap_tol=DEFAULT_GAP_TOL):
    """Gradient wrt raw from upstream gradient wrt q and/or R (single sample)."""
    raw = np.asarray(raw, dtype=float)
    if grad_q is None and grad_R is None:
        raise ValueError("head_backward needs grad_q and/or grad_R")
    if head == "quat":
        q, _, valid = _quat_head_forward(raw)
        if not valid:
            raise ValueError("quat head input has near-zero norm")
        g = np.zeros(4)
        if grad_q is not None:
            g = g + np.asarray(grad_q, dtype=float)
        if grad_R is not None:
            g = g + _grad_R_to_grad_q(q, np.asarray(grad_R, dtype=float))
        return _quat_head_backward(raw, g)
    if head == "6d":
        if grad_q is not None:
            raise ValueError("6d head only propagates gradients wrt R")
        so3.sixd_to_rot(raw)  # degeneracy check
        return _sixd_head_backward(raw, np.asarray(grad_R, dtype=float))
    if head == "A":
        q, _, _, dec, valid = _sym_head_forward(raw, gap_tol)
        if not valid:
            from .symrep import DegenerateEigenspace
            raise DegenerateEigenspace("predicted A has a non-simple minimum eigenvalue")
        g = np.zeros(4)
        if grad_q is not None:
            g = g + np.asarray(grad_q, dtype=float)
        if grad_R is not None:
            g = g + _grad_R_to_grad_q(q, np.asarray(grad_R, dtype=float))
        return _sym_head_backward(dec, q, g)
    raise ValueError(f"unknown head {head!r}")


def head_norm_metric(raw):
    """Norm of the raw head input, an alternative uncertainty score."""
    return float(np.linalg.norm(np.asarray(raw, dtype=float)))


# ---------------------------------------------------------------------------
# Losses


def _loss_quat(q, q_gt):
    dot = np.sum(q * q_gt, axis=-1)
    s = np.where(dot < 0, -1.0, 1.0)[..., None]
    diff = q - s * q_gt
    loss = np.sum(diff * diff, axis=-1)
    return loss, 2.0 * diff


def _loss_chord(R, R_gt):
    diff = R - R_gt
    loss = np.sum(diff * diff, axis=(-2, -1))
    return loss, 2.0 * diff


def _loss_ang(R, R_gt):
    theta = so3.d_ang(R, R_gt)
    loss = theta * theta
    # -(theta/sin(theta)) R_gt, with the magnitude clamped approaching pi
    # (tangentially this is the chordal direction) and the zero subgradient
    # at the endpoints where Log is non-differentiable.
    sin_floor = np.sin(np.pi - 1e-6)
    factor = -theta / np.maximum(np.sin(theta), sin_floor)
    factor = np.where((theta < 1e-12) | (theta > np.pi - 1e-12), 0.0, factor)
    return loss, factor[..., None, None] * R_gt


def loss_eval(kind, R, q, R_gt, q_gt):
    """Evaluate one loss; returns (value, grad_R, grad_q), unused grad None."""
    if kind == "quat":
        loss, grad_q = _loss_quat(np.asarray(q, float), np.asarray(q_gt, float))
        return float(loss), None, grad_q
    if kind == "chord":
        loss, grad_R = _loss_chord(np.asarray(R, float), np.asarray(R_gt, float))
        return float(loss), grad_R, None
    if kind == "ang":
        loss, grad_R = _loss_ang(np.asarray(R, float), np.asarray(R_gt, float))
        return float(loss), grad_R, None
    raise ValueError(f"unknown loss {kind!r}")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None


def adam_init(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                     m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])


def adam_step(state, params, grads):
    """One bias-corrected Adam update; mutates state, returns new params."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        mhat = state.m[i] / (1 - state.beta1 ** t)
        vhat = state.v[i] / (1 - state.beta2 ** t)
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out


# ---------------------------------------------------------------------------
# Training protocol


@dataclass
class TrainConfig:
    """Synthetic rotation-regression experiment settings.

    lr = None samples a per-trial rate log-uniformly from lr_range.
    head may be one of HEADS, a list of them, or "all".
    An epoch is five mini-batches of batch_rotations freshly sampled
    rotations; the test set is fixed per trial.
    """

    seed: int = 0
    lr: float = None
    epochs: int = 50
    batch_rotations: int = 100
    matches_per_rotation: int = 10
    phi_max_deg: float = 180.0
    sigma: float = 0.01
    head: object = "all"
    loss: str = "chord"
    hidden_widths: tuple = (128, 128)
    trials: int = 10
    test_rotations: int = 300
    lr_range: tuple = (1e-4, 1e-3)
    batches_per_epoch: int = 5

    def heads(self):
        h = self.head
        if h == "all":
            return list(HEADS)
        if isinstance(h, str):
            h = [h]
        for name in h:
            if name not in HEADS:
                raise ValueError(f"unknown head {name!r}; choose from {HEADS}")
        return list(h)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "hidden_widths" in d:
            d["hidden_widths"] = tuple(d["hidden_widths"])
        if "lr_range" in d:
            d["lr_range"] = tuple(d["lr_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EpochRow:
    trial: int
    seed: int
    lr: float
    epoch: int
    split: str
    head: str
    mean_deg: float
    median_deg: float
    p10_deg: float
    p90_deg: float


@dataclass
class TrialResult:
    head: str
    trial: int
    seed: int
    lr: float
    rows: list
    net: DenseNet
    degenerate_count: int


@dataclass
class ExperimentResult:
    config: TrainConfig
    trials: list

    def rows(self):
        out = []
        for t in self.trials:
            out.extend(t.rows)
        return out


CORRUPTIONS = ("none", "noise", "shuffle", "zero")


def reference_vectors(m):
    """m fixed, well-spread unit directions (Fibonacci sphere lattice).

    The regression task observes rotated-and-noised images of these fixed
    reference directions; keeping them fixed makes the input manifold small
    enough that all heads train to low error within the short protocol.
    """
    i = np.arange(m) + 0.5
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(golden * i), r * np.sin(golden * i), z], axis=-1)


def sample_batch(cfg, rng, n_rotations, corruption="none"):
    """(x, q_gt, R_gt): flattened pairs, quaternion and matrix targets.

    v_i = R u_i + sigma * eps, unit-normalized afterwards (observations are
    directions, so corruption cannot signal itself through amplitude).
    Corruptions model test-time OOD inputs: "noise" inflates sigma 100x,
    "shuffle" permutes the v_i against the u_i, "zero" blanks a random half
    of the pairs.
    """
    if corruption not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {corruption!r}; choose from {CORRUPTIONS}")
    n = n_rotations
    m = cfg.matches_per_rotation
    a = rng.standard_normal((n, 3))
    a /= np.linalg.norm(a, axis=-1, keepdims=True)
    phi = rng.uniform(0.0, np.deg2rad(cfg.phi_max_deg), n)
    R_gt = so3.exp_map(phi[:, None] * a)
    u = np.broadcast_to(reference_vectors(m), (n, m, 3)).copy()
    v = np.einsum("nij,nmj->nmi", R_gt, u)
    sigma = cfg.sigma * (100.0 if corruption == "noise" else 1.0)
    if sigma > 0:
        v = v + sigma * rng.standard_normal(v.shape)
    if corruption == "shuffle":
        v = rng.permuted(v, axis=1)
    v = v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
    if corruption == "zero":
        blank = rng.random((n, m)) < 0.5
        u = np.where(blank[..., None], 0.0, u)
        v = np.where(blank[..., None], 0.0, v)
    x = np.concatenate([u, v], axis=-1).reshape(n, 6 * m)
    return x, so3.rot_to_quat(R_gt), R_gt


def _batch_head(head, raw, gap_tol=DEFAULT_GAP_TOL):
    """Batched head forward: (q, R, trace-or-None, aux, valid)."""
    if head == "quat":
        q, R, valid = _quat_head_forward(raw)
        return q, R, None, None, valid
    if head == "6d":
        R, valid = _sixd_head_forward(raw)
        return so3.rot_to_quat(R), R, None, None, valid
    if head == "A":
        q, R, trace, dec, valid = _sym_head_forward(raw, gap_tol)
        return q, R, trace, dec, valid
    raise ValueError(f"unknown head {head!r}")


def _batch_loss(kind, q, R, q_gt, R_gt):
    """Per-sample losses and upstream gradients (grad_q, grad_R)."""
    if kind == "quat":
        loss, gq = _loss_quat(q, q_gt)
        return loss, gq, None
    if kind == "chord":
        loss, gR = _loss_chord(R, R_gt)
        return loss, None, gR
    if kind == "ang":
        loss, gR = _loss_ang(R, R_gt)
        return loss, None, gR
    raise ValueError(f"unknown loss {kind!r}")


def _batch_head_backward(head, raw, q, aux, grad_q, grad_R):
    if grad_R is not None and head != "6d":
        extra = _grad_R_to_grad_q(q, grad_R)
        grad_q = extra if grad_q is None else grad_q + extra
    if head == "quat":
        return _quat_head_backward(raw, grad_q)
    if head == "6d":
        return _sixd_head_backward(raw, grad_R)
    if head == "A":
        return _sym_head_backward(aux, q, grad_q)
    raise ValueError(f"unknown head {head!r}")


def _angular_errors_deg(R, R_gt, valid):
    errs = np.rad2deg(so3.d_ang(R, R_gt))
    return errs[valid]


def _stats_row(trial, seed, lr, epoch, split, head, errs_deg):
    errs = np.asarray(errs_deg, dtype=float)
    if errs.size == 0:
        mean = med = p10 = p90 = float("nan")
    else:
        mean = float(np.mean(errs))
        p10, med, p90 = (float(p) for p in np.percentile(errs, [10, 50, 90]))
    return EpochRow(trial, seed, lr, epoch, split, head,
                    mean_deg=mean, median_deg=med, p10_deg=p10, p90_deg=p90)


def evaluate(net, head, x, R_gt, gap_tol=DEFAULT_GAP_TOL):
    """Forward a batch and return (errors_deg over valid, traces, valid mask)."""
    raw, _ = forward(net, x)
    q, R, trace, _, valid = _batch_head(head, raw, gap_tol)
    errs = _angular_errors_deg(R, R_gt, valid)
    return errs, trace, valid


def train_single(cfg, head, trial=0):
    """Train one head for one trial; returns a TrialResult."""
    if cfg.loss not in LOSSES:
        raise ValueError(f"unknown loss {cfg.loss!r}; choose from {LOSSES}")
    if cfg.loss == "quat" and head == "6d":
        raise ValueError("quat loss is not differentiable through the 6d head; use chord or ang")
    lr = cfg.lr
    if lr is None:
        lo, hi = cfg.lr_range
        lr = float(10.0 ** rng_for(cfg.seed, trial, _STREAM_LR).uniform(np.log10(lo), np.log10(hi)))
    in_dim = 6 * cfg.matches_per_rotation
    net = init_net(in_dim, cfg.hidden_widths, HEAD_DIMS[head], rng_for(cfg.seed, trial, _STREAM_INIT))
    test_x, _, test_R = sample_batch(cfg, rng_for(cfg.seed, trial, _STREAM_TEST), cfg.test_rotations)

    rows = []
    degenerate = 0

    def test_row(epoch):
        errs, _, _ = evaluate(net, head, test_x, test_R)
        rows.append(_stats_row(trial, cfg.seed, lr, epoch, "test", head, errs))

    # Epoch-0 baseline: untrained test row plus one untouched training batch.
    base_x, _, base_R = sample_batch(cfg, rng_for(cfg.seed, trial, _STREAM_TRAIN, 0, 0), cfg.batch_rotations)
    errs0, _, _ = evaluate(net, head, base_x, base_R)
    rows.append(_stats_row(trial, cfg.seed, lr, 0, "train", head, errs0))
    test_row(0)

    state = adam_init(net.params(), lr)
    for epoch in range(1, cfg.epochs + 1):
        epoch_errs = []
        for batch in range(cfg.batches_per_epoch):
            rng = rng_for(cfg.seed, trial, _STREAM_TRAIN, epoch, batch)
            x, q_gt, R_gt = sample_batch(cfg, rng, cfg.batch_rotations)
            raw, cache = forward(net, x)
            q, R, _, aux, valid = _batch_head(head, raw)
            n_valid = int(valid.sum())
            degenerate += int((~valid).sum())
            epoch_errs.append(_angular_errors_deg(R, R_gt, valid))
            if n_valid == 0:
                continue
            loss, gq, gR = _batch_loss(cfg.loss, q, R, q_gt, R_gt)
            # Mean over valid samples; invalid ones contribute zero gradient.
            scale = (valid / n_valid)
            if gq is not None:
                gq = gq * scale[..., None]
            if gR is not None:
                gR = gR * scale[..., None, None]
            grad_raw = _batch_head_backward(head, raw, q, aux, gq, gR)
            grad_raw = np.where(valid[..., None], grad_raw, 0.0)
            grads = backward(net, cache, grad_raw)
            flat = []
            for dW, db in grads:
                flat.extend([dW, db])
            net.set_params(adam_step(state, net.params(), flat))
        rows.append(_stats_row(trial, cfg.seed, lr, epoch, "train", head,
                               np.concatenate(epoch_errs) if epoch_errs else []))
        test_row(epoch)
    return TrialResult(head=head, trial=trial, seed=cfg.seed, lr=lr, rows=rows,
                       net=net, degenerate_count=degenerate)


def train_experiment(cfg):
    """Run cfg.trials trials for every requested head."""
    results = []
    for head in cfg.heads():
        for trial in range(cfg.trials):
            results.append(train_single(cfg, head, trial))
    return ExperimentResult(config=cfg, trials=results)


# ---------------------------------------------------------------------------
# Dispersion-thresholding evaluation


@dataclass
class DTReport:
    """Outcome of dispersion thresholding on a clean/corrupted test mix.

    precision is the fraction of corrupted samples that were rejected, or
    None when it is undefined (no thresholding or no corrupted samples).
    """

    q: float
    corruption: str
    threshold: float
    traces: np.ndarray
    errors_deg: np.ndarray
    kept: np.ndarray
    corrupted: np.ndarray
    mean_trace_clean: float
    mean_trace_corrupted: float

    @property
    def kept_fraction(self):
        return float(np.mean(self.kept))

    @property
    def precision(self):
        n_corr = int(self.corrupted.sum())
        n_rejected = int((~self.kept).sum())
        if n_corr == 0 or n_rejected == 0:
            return None
        return float((self.corrupted & ~self.kept).sum() / n_corr)

    @property
    def mean_error_full(self):
        return float(np.mean(self.errors_deg))

    @property
    def mean_error_kept(self):
        if not self.kept.any():
            return float("nan")
        return float(np.mean(self.errors_deg[self.kept]))


def dt_evaluate(net, cfg, q, corruption, rng, n_mix=200, n_reference=1000):
    """Threshold dispersion traces at the q-quantile and score a 50/50 mix.

    The threshold comes from n_reference fresh in-distribution samples
    (the training set is dynamically resampled, so these share its
    distribution). Half the n_mix test samples are corrupted; q >= 1
    disables rejection entirely (every sample kept, precision undefined).
    """
    from .bingham import dt_fit

    if corruption not in CORRUPTIONS:
        raise ValueError(f"unknown corruption {corruption!r}; choose from {CORRUPTIONS}")
    x_ref, _, _ = sample_batch(cfg, rng, n_reference)
    raw_ref, _ = forward(net, x_ref)
    _, _, ref_traces, _, _ = _sym_head_forward(raw_ref)
    threshold = dt_fit(ref_traces, min(q, 1.0))

    n_corrupt = 0 if corruption == "none" else n_mix // 2
    n_clean = n_mix - n_corrupt
    x_cl, _, R_cl = sample_batch(cfg, rng, n_clean)
    raw_cl, _ = forward(net, x_cl)
    _, R_pred_cl, tr_cl, _, _ = _sym_head_forward(raw_cl)
    errs = [np.rad2deg(so3.d_ang(R_pred_cl, R_cl))]
    traces = [tr_cl]
    corrupted = [np.zeros(n_clean, dtype=bool)]
    tr_co = np.array([])
    if n_corrupt:
        x_co, _, R_co = sample_batch(cfg, rng, n_corrupt, corruption=corruption)
        raw_co, _ = forward(net, x_co)
        _, R_pred_co, tr_co, _, _ = _sym_head_forward(raw_co)
        errs.append(np.rad2deg(so3.d_ang(R_pred_co, R_co)))
        traces.append(tr_co)
        corrupted.append(np.ones(n_corrupt, dtype=bool))
    traces = np.concatenate(traces)
    kept = traces <= threshold if q < 1.0 else np.ones(n_mix, dtype=bool)
    return DTReport(q=q, corruption=corruption, threshold=threshold,
                    traces=traces, errors_deg=np.concatenate(errs), kept=kept,
                    corrupted=np.concatenate(corrupted),
                    mean_trace_clean=float(np.mean(tr_cl)),
                    mean_trace_corrupted=float(np.mean(tr_co)) if n_corrupt else float("nan"))


# ---------------------------------------------------------------------------
# Last-layer structure


def last_layer_decompose(W, b, gamma):
    """Split the final linear layer into symmetric-matrix bases.

    Returns ({A(w_i)}, A(b), sum_i A(w_i) gamma_i + A(b)); the combination
    equals theta_to_A(W @ gamma + b) exactly by linearity.
    """
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if W.ndim != 2 or W.shape[0] != 10:
        raise ValueError(f"W must be (10, N), got {W.shape}")
    if b.shape != (10,):
        raise ValueError(f"b must be a 10-vector, got {b.shape}")
    if gamma.shape != (W.shape[1],):
        raise ValueError(f"gamma must have length {W.shape[1]}, got {gamma.shape}")
    bases = [theta_to_A(W[:, i]) for i in range(W.shape[1])]
    bias_A = theta_to_A(b)
    combined = bias_A.copy()
    for g, base in zip(gamma, bases):
        combined += g * base
    return bases, bias_A, combined


# ---------------------------------------------------------------------------
# Model persistence (format v1: npz with a JSON meta entry)

MODEL_FORMAT = "so3sym-model-v1"


def save_model(path, net, head, config):
    meta = {"format": MODEL_FORMAT, "head": head,
            "activations": net.activations,
            "config": asdict(config) if isinstance(config, TrainConfig) else dict(config)}
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"W{l}"] = W
        arrays[f"b{l}"] = b
    np.savez(path, **arrays)


def load_model(path):
    """Returns (net, head, config_dict)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a {MODEL_FORMAT} file: {path}")
        weights, biases = [], []
        l = 0
        while f"W{l}" in data:
            weights.append(data[f"W{l}"])
            biases.append(data[f"b{l}"])
            l += 1
    net = DenseNet(weights, biases, meta["activations"])
    return net, meta["head"], meta["config"]
