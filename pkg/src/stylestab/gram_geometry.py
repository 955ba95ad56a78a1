"""Solution-set geometry of the Gram-matching objective.

The objective J(P) = ||P P^T - S S^T||_F^2 over C x HW feature matrices
has its whole orthogonal orbit {S U : U orthogonal} as global minima, and
every minimizer lies on the sphere of radius sqrt(tr S S^T). These
routines construct orbit points, measure the objective, and probe the
minimizer set numerically.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .optim import Adam
from .perceptual import gram


class DivergenceError(RuntimeError):
    pass


def objective(phi_p, phi_s):
    """J = squared Frobenius distance between the two Gram matrices.

    Accepts numpy arrays or Tensors; returns a Tensor (differentiable
    w.r.t. phi_p when it is a Tensor with requires_grad).
    """
    p = phi_p if isinstance(phi_p, Tensor) else Tensor(phi_p)
    s = phi_s if isinstance(phi_s, Tensor) else Tensor(phi_s)
    if p.shape != s.shape:
        raise ValueError(f"objective: shape mismatch {p.shape} vs {s.shape}")
    gp = T.matmul(p, T.transpose(p))
    gs = (s.data @ s.data.T)
    return T.sum_all(T.square(T.sub(gp, Tensor(gs))))


def solution_radius(phi_s):
    """sqrt(tr S S^T) — the Frobenius norm of the target feature matrix."""
    s = np.asarray(phi_s, dtype=np.float64)
    return float(np.sqrt((s * s).sum()))


def haar_orthogonal(n, rng):
    """Haar-distributed orthogonal n x n matrix (QR with sign-fixed R diagonal)."""
    a = rng.normal(size=(n, n))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d[None, :]


def orbit_sample(phi_s, seed=0, u=None):
    """A random point S U of the orthogonal orbit through the target.

    Pass u explicitly (e.g. identity or -identity) to force a specific
    orbit point; otherwise a Haar orthogonal matrix is drawn from seed.
    """
    s = np.asarray(phi_s, dtype=np.float64)
    hw = s.shape[1]
    if u is None:
        u = haar_orthogonal(hw, np.random.default_rng(seed))
    return s @ u


def minimize_objective(phi_s, init, steps=2000, lr=0.05):
    """Adam descent on J from init; returns (final matrix, final J, norm history).

    Raises DivergenceError if J blows up 10x over its initial value.
    """
    if steps < 1:
        raise ValueError("minimize_objective: steps must be >= 1")
    s = np.asarray(phi_s, dtype=np.float64)
    p = Tensor(np.array(init, dtype=np.float64), requires_grad=True)
    opt = Adam([p], lr=lr)
    j0 = objective(p.detach(), s).item()
    # a run starting at float-noise J (already at a minimum) cannot
    # meaningfully diverge; Adam's sign-normalized steps always wiggle it
    floor = 1e-9 * max(1.0, float(np.sum((s @ s.T) ** 2)))
    j = j0
    for _ in range(steps):
        opt.zero_grad()
        loss = objective(p, s)
        j = loss.item()
        if j0 > floor and j > 10.0 * j0:
            raise DivergenceError(f"objective rose from {j0:.3g} to {j:.3g}")
        loss.backward()
        opt.step()
    final_j = objective(p.detach(), s).item()
    final_norm = float(np.linalg.norm(p.data))
    return p.data, final_j, final_norm


def orbit_certificate(phi_s, n_samples=32, seed=0):
    """Sample the orbit and certify radius/diameter facts about it.

    Returns dict with radius, trace, max pairwise distance, and the worst
    objective value over the samples.
    """
    s = np.asarray(phi_s, dtype=np.float64)
    radius = solution_radius(s)
    rng = np.random.default_rng(seed)
    pts = [s @ haar_orthogonal(s.shape[1], rng) for _ in range(n_samples)]
    pts.append(s.copy())
    pts.append(-s)
    worst_j = max(objective(p, s).item() for p in pts)
    max_d = 0.0
    for i in range(len(pts)):
        for k in range(i + 1, len(pts)):
            max_d = max(max_d, float(np.linalg.norm(pts[i] - pts[k])))
    return {
        "radius": radius,
        "trace": radius * radius,
        "points": pts,
        "max_pairwise_distance": max_d,
        "worst_objective": worst_j,
    }


def trace_report(style_image, net, taps):
    """Per-tap Gram trace and radius for a style image through the loss net."""
    feats = net.extract(style_image, taps)
    rows = []
    for f in feats:
        g = gram(f).data
        tr = float(np.trace(g))
        rows.append({"tap": f.layer, "trace": tr, "radius": float(np.sqrt(tr))})
    return rows
