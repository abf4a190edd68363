"""Pluggable clustering losses, each returning its value and analytic
gradients with respect to the arrays it was given.

Every node-level term sums over the nodes (or interactions) of the current
batch only; the target distribution ``P`` is the one global object and is
frozen once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tgclust.evaluation import kmeans

MODULES = ("x", "d", "c", "b", "s")
MODULE_NAMES = {"x": "L_X", "d": "L_D", "c": "L_C", "b": "L_B", "s": "L_S"}
CENTER_MODULES = frozenset("dcbs")


class LossError(ValueError):
    pass


def parse_modules(spec) -> tuple[str, ...]:
    """``"x,d"`` / ``["x", "d"]`` / ``"xd"`` -> ``("x", "d")`` in canonical order."""
    if spec is None:
        return ()
    if isinstance(spec, str):
        tokens = [t for t in spec.replace(",", " ").split() if t]
        if len(tokens) == 1 and len(tokens[0]) > 1 and tokens[0].lower() not in ("base", "none"):
            tokens = list(tokens[0])
    else:
        tokens = list(spec)
    chosen = set()
    for tok in tokens:
        tok = tok.strip().lower()
        if tok in ("", "base", "none"):
            continue
        if tok not in MODULES:
            raise LossError(f"unknown module {tok!r}; choose from {','.join(MODULES)}")
        chosen.add(tok)
    return tuple(m for m in MODULES if m in chosen)


@dataclass
class LossWeights:
    x: float = 1.0
    d: float = 1.0
    c: float = 1.0
    b: float = 1.0
    s: float = 1.0
    tau: float = 0.5

    def __post_init__(self):
        for m in MODULES:
            w = getattr(self, m)
            if not np.isfinite(w) or w < 0:
                raise LossError(f"weight for {m} must be finite and >= 0, got {w}")
        if not self.tau > 0:
            raise LossError(f"temperature must be positive, got {self.tau}")

    def __getitem__(self, module: str) -> float:
        return getattr(self, module)


@dataclass
class ClusterCenters:
    centers: np.ndarray
    snapshot_prev: np.ndarray | None = None

    def __post_init__(self):
        self.centers = np.array(self.centers, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[0] < 1:
            raise LossError("centers must be a non-empty K x d matrix")

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    def snapshot(self) -> None:
        self.snapshot_prev = self.centers.copy()

    def reset_snapshot(self) -> None:
        self.snapshot_prev = None


def _sq_dist(Z: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = Z[:, None, :] - C[None, :, :]
    return np.einsum("ikj,ikj->ik", diff, diff)


def soft_assignment(Z: np.ndarray, C: np.ndarray, exponent: float = -0.5) -> np.ndarray:
    """Student-t style membership ``(1 + ||z_i - c_k||^2)^exponent``, row-normalized."""
    kernel = (1.0 + _sq_dist(np.atleast_2d(Z), C)) ** exponent
    return kernel / kernel.sum(axis=1, keepdims=True)


def target_distribution(Q: np.ndarray) -> np.ndarray:
    """Sharpened ``Q``: square, divide by soft cluster frequency, renormalize."""
    freq = Q.sum(axis=0)
    w = Q**2 / freq
    P = w / w.sum(axis=1, keepdims=True)
    P.setflags(write=False)
    return P


def reconstruction_loss(Z: np.ndarray, X: np.ndarray):
    """``sum_i ||z_i - x_i||^2`` over the given batch rows."""
    if Z.shape != X.shape:
        raise LossError(f"embedding rows {Z.shape} and feature rows {X.shape} differ")
    diff = Z - X
    return float(np.sum(diff * diff)), 2.0 * diff


def kl_alignment_loss(Z: np.ndarray, C: np.ndarray, P: np.ndarray, exponent: float = -0.5):
    """``KL(P || Q)`` summed over batch rows; ``P`` is held constant.

    Returns ``(value, grad_Z, grad_C)``.
    """
    diff = Z[:, None, :] - C[None, :, :]
    dist = np.einsum("ikj,ikj->ik", diff, diff)
    kernel = (1.0 + dist) ** exponent
    Q = kernel / kernel.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (np.log(P) - np.log(Q)), 0.0)
    value = float(terms.sum())
    # d/d dist_ik = exponent * (Q_ik * sum_k P_ik - P_ik) / (1 + dist_ik)
    coef = exponent * (Q * P.sum(axis=1, keepdims=True) - P) / (1.0 + dist)
    g = 2.0 * coef[:, :, None] * diff
    return value, g.sum(axis=1), -g.sum(axis=0)


def center_contrast(C: np.ndarray, tau: float):
    """Cluster-level contrast over center cosines. Returns ``(value, grad_C)``."""
    K = C.shape[0]
    norms = np.linalg.norm(C, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise LossError(f"cluster center {int(zero[0])} has zero norm; cosine undefined")
    Cn = C / norms[:, None]
    S = Cn @ Cn.T
    np.fill_diagonal(S, 1.0)
    logits = S / tau
    logits -= logits.max(axis=1, keepdims=True)
    E = np.exp(logits)
    soft = E / E.sum(axis=1, keepdims=True)
    r = np.diag(soft).copy()
    total = r.sum()
    value = float(-np.log(total / K))
    # dL/dS_kl = (r_k / sum r) * soft_kl / tau off the diagonal; the diagonal
    # cosine is identically 1
    G = (r / total)[:, None] * soft / tau
    np.fill_diagonal(G, 0.0)
    g_cn = (G + G.T) @ Cn
    g = (g_cn - np.einsum("ij,ij->i", g_cn, Cn)[:, None] * Cn) / norms[:, None]
    return value, g


def contrastive_loss(Zi: np.ndarray, Zj: np.ndarray, Zn: np.ndarray, C: np.ndarray, tau: float,
                     eps: float = 1e-8, guard: float = 1e-6):
    """Node-level ratio contrast for each (anchor, positive, negatives) item
    plus the cluster-level center contrast.

    ``Zi``, ``Zj`` are ``B x d``; ``Zn`` is ``B x Q x d``. Per item,
    ``a = -log(||z_i - z_j||^2 + eps)``, ``b = -log(sum_n ||z_i - z_n||^2 + eps)``
    and the node term is ``a / (a + b)``. Items with ``|a + b| < guard``
    (where the ratio is singular) contribute nothing.

    Returns ``(value, node_value, grad_Zi, grad_Zj, grad_Zn, grad_C)``.
    """
    dp_vec = Zi - Zj
    dn_vec = Zi[:, None, :] - Zn
    dp = np.einsum("ij,ij->i", dp_vec, dp_vec)
    dn = np.einsum("ikj,ikj->i", dn_vec, dn_vec)
    a = -np.log(dp + eps)
    b = -np.log(dn + eps)
    den = a + b
    ok = np.abs(den) >= guard
    safe = np.where(ok, den, 1.0)
    node = np.where(ok, a / safe, 0.0)
    dL_da = np.where(ok, b / safe**2, 0.0)
    dL_db = np.where(ok, -a / safe**2, 0.0)
    g_dp = -dL_da / (dp + eps)
    g_dn = -dL_db / (dn + eps)
    g_zj = -2.0 * g_dp[:, None] * dp_vec
    g_zn = -2.0 * g_dn[:, None, None] * dn_vec
    g_zi = -g_zj - g_zn.sum(axis=1)
    cluster, g_c = center_contrast(C, tau)
    node_value = float(node.sum())
    return node_value + cluster, node_value, g_zi, g_zj, g_zn, g_c


def cross_batch_loss(C: np.ndarray, C_prev: np.ndarray | None):
    """``||C - C_prev||_F^2``; zero when no previous snapshot exists."""
    if C_prev is None:
        return 0.0, np.zeros_like(C)
    diff = C - C_prev
    return float(np.sum(diff * diff)), 2.0 * diff


def cluster_scaling_loss(Z: np.ndarray, C: np.ndarray, shrink: str = "all"):
    """Dilation of centers, shrink of nodes toward centers, plus ``||C||_F^2``.

    The dilation term is repeated once per batch node, as is the shrink term
    (toward all centers by default; ``shrink="assigned"`` pulls each node
    only to its nearest center). Returns ``(value, grad_Z, grad_C)``.
    """
    B = Z.shape[0]
    K = C.shape[0]
    g_c = 2.0 * C.copy()
    value = float(np.sum(C * C))
    if K > 1:
        cdiff = C[:, None, :] - C[None, :, :]
        dil = -float(np.einsum("klj,klj->", cdiff, cdiff)) / ((K - 1) * K)
        value += B * dil
        g_c += B * (-4.0 / ((K - 1) * K)) * (K * C - C.sum(axis=0, keepdims=True))
    diff = Z[:, None, :] - C[None, :, :]
    if shrink == "all":
        value += float(np.einsum("ikj,ikj->", diff, diff)) / K
        g_z = 2.0 * diff.sum(axis=1) / K
        g_c += -2.0 * diff.sum(axis=0) / K
    elif shrink == "assigned":
        dist = np.einsum("ikj,ikj->ik", diff, diff)
        near = np.argmin(dist, axis=1)
        d_near = diff[np.arange(B), near]
        value += float(np.sum(d_near * d_near))
        g_z = 2.0 * d_near
        np.add.at(g_c, near, -2.0 * d_near)
    else:
        raise LossError(f"unknown shrink mode {shrink!r}")
    return value, g_z, g_c


def total_loss(base: float, modules: dict, weights: LossWeights) -> float:
    """``base + sum_m w_m * L_m`` over the enabled modules in ``modules``."""
    return float(base + sum(weights[m] * v for m, v in modules.items()))


@dataclass
class CenterInit:
    centers: ClusterCenters
    P: np.ndarray = field(repr=False)


def init_centers(features, K: int, seed: int = 0, exponent: float = -0.5,
                 restarts: int = 10) -> CenterInit:
    """K-means centers on the initial features and the frozen prior ``P``."""
    X = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if K > X.shape[0]:
        raise LossError(f"K={K} exceeds the number of nodes {X.shape[0]}")
    res = kmeans(X, K, seed=seed, restarts=restarts)
    Q = np.empty((X.shape[0], K))
    for lo in range(0, X.shape[0], 8192):
        Q[lo:lo + 8192] = soft_assignment(X[lo:lo + 8192], res.centers, exponent)
    return CenterInit(ClusterCenters(res.centers), target_distribution(Q))
