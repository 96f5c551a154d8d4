"""Two-sample integral probability metrics: RBF-kernel MMD and entropic OT.

Both estimators are differentiable through ``numgrad`` so they can sit inside
a training loss; numpy-only helpers serve the diagnostics on large samples.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.special import logsumexp

from . import numgrad as ng
from .numgrad import Tensor


class SinkhornWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class IpmConfig:
    kind: Literal["MMD", "WASS"] = "WASS"
    rbf_bandwidth: Union[float, Literal["median-heuristic"]] = "median-heuristic"
    unbiased_mmd: bool = False
    sinkhorn_epsilon: float = 0.1
    # "mean_cost" scales epsilon by the (detached) mean ground cost of the batch
    sinkhorn_epsilon_mode: Literal["absolute", "mean_cost"] = "mean_cost"
    sinkhorn_iters: int = 100
    sinkhorn_tol: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("MMD", "WASS"):
            raise ValueError(f"unknown IPM kind {self.kind!r}")
        if self.sinkhorn_epsilon <= 0:
            raise ValueError("sinkhorn_epsilon must be positive")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if self.sinkhorn_tol <= 0:
            raise ValueError("sinkhorn_tol must be positive")
        if isinstance(self.rbf_bandwidth, str):
            if self.rbf_bandwidth != "median-heuristic":
                raise ValueError(f"bad rbf_bandwidth {self.rbf_bandwidth!r}")
        elif self.rbf_bandwidth <= 0:
            raise ValueError("rbf_bandwidth must be positive")


def _check_pair(A: Tensor, B: Tensor) -> None:
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError(f"IPM needs two non-empty point sets, got {A.shape[0]} and {B.shape[0]} points")
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ng.ShapeError(f"IPM point sets must share dimensionality: {A.shape} vs {B.shape}")


def _as_points(X) -> Tensor:
    X = ng.as_tensor(X)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    return X


def sq_dists(A: Tensor, B: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances, taped."""
    a2 = ng.sum_(ng.square(A), axis=1, keepdims=True)
    b2 = ng.sum_(ng.square(B), axis=1, keepdims=True)
    return a2 + b2.T - 2.0 * (A @ B.T)


def _np_sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def median_bandwidth(A: np.ndarray, B: np.ndarray, max_points: int = 500) -> float:
    """Median pairwise distance over the pooled sample (first ``max_points`` rows)."""
    Z = np.concatenate([A, B], axis=0)[:max_points]
    d2 = _np_sq_dists(Z, Z)[np.triu_indices(len(Z), k=1)]
    if d2.size == 0:
        return 1.0
    med = float(np.sqrt(np.median(d2)))
    return med if med > 0 else 1.0


def _bandwidth(A: np.ndarray, B: np.ndarray, cfg: IpmConfig) -> float:
    if cfg.rbf_bandwidth == "median-heuristic":
        return median_bandwidth(A, B)
    return float(cfg.rbf_bandwidth)


def mmd2(A, B, cfg: IpmConfig = IpmConfig(kind="MMD")) -> Tensor:
    """Squared MMD with k(a, b) = exp(-|a-b|^2 / (2 sigma^2)).

    Biased V-statistic by default (never negative); ``cfg.unbiased_mmd``
    switches to the U-statistic, which drops the diagonal self-similarities.
    """
    A, B = _as_points(A), _as_points(B)
    _check_pair(A, B)
    sigma = _bandwidth(A.data, B.data, cfg)
    scale = -1.0 / (2.0 * sigma * sigma)
    kaa = ng.exp(sq_dists(A, A) * scale)
    kbb = ng.exp(sq_dists(B, B) * scale)
    kab = ng.exp(sq_dists(A, B) * scale)
    if not cfg.unbiased_mmd:
        return kaa.mean() + kbb.mean() - 2.0 * kab.mean()
    m, n = A.shape[0], B.shape[0]
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least two points per set")
    # k(a, a) = 1 on the diagonal
    return ((kaa.sum() - m) / (m * (m - 1)) + (kbb.sum() - n) / (n * (n - 1))
            - 2.0 * kab.mean())


CHECK_EVERY = 10  # iterations between marginal checks


def sinkhorn_potentials(C: np.ndarray, eps: float, iters: int, tol: float):
    """Log-domain Sinkhorn for uniform marginals.

    Returns ``(f, g, P, converged, n_iter)`` with P the entropic plan.
    """
    n, m = C.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    converged = False
    it = 0
    for it in range(1, iters + 1):
        f = -eps * logsumexp((g[None, :] - C) / eps + log_b[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - C) / eps + log_a[:, None], axis=0)
        if it % CHECK_EVERY and it < iters:
            continue
        # column marginals are exact after the g-update; check the rows
        logP = (f[:, None] + g[None, :] - C) / eps + log_a[:, None] + log_b[None, :]
        row = np.exp(logsumexp(logP, axis=1))
        if np.abs(row - np.exp(log_a)).sum() < tol:
            converged = True
            break
    P = np.exp((f[:, None] + g[None, :] - C) / eps + log_a[:, None] + log_b[None, :])
    return f, g, P, converged, it


def _sinkhorn_cost_op(C: Tensor, eps: float, iters: int, tol: float) -> Tensor:
    f, g, P, converged, n_iter = sinkhorn_potentials(C.data, eps, iters, tol)
    if not converged:
        warnings.warn(f"Sinkhorn did not reach tol={tol:g} in {n_iter} iterations", SinkhornWarning,
                      stacklevel=3)
    n, m = C.shape
    # dual objective; its derivative in C is the plan P once (f, g) are optimal
    value = f.mean() + g.mean() - eps * (P.sum() - 1.0)
    out = ng.make_op(np.asarray(value), (C,), lambda gr: (gr * P,), "sinkhorn")
    return out


def sinkhorn(A, B, cfg: IpmConfig = IpmConfig(kind="WASS")) -> Tensor:
    """Entropic OT cost between uniform empirical measures, squared-Euclidean ground cost."""
    A, B = _as_points(A), _as_points(B)
    _check_pair(A, B)
    C = sq_dists(A, B)
    eps = cfg.sinkhorn_epsilon
    if cfg.sinkhorn_epsilon_mode == "mean_cost":
        mc = float(np.mean(np.maximum(C.data, 0.0)))
        eps = eps * mc if mc > 0 else eps
    return _sinkhorn_cost_op(C, eps, cfg.sinkhorn_iters, cfg.sinkhorn_tol)


def ipm(A, B, cfg: IpmConfig) -> Tensor:
    return mmd2(A, B, cfg) if cfg.kind == "MMD" else sinkhorn(A, B, cfg)


def _kernel_sum(A: np.ndarray, B: np.ndarray, sigma: float, chunk: int = 2048) -> float:
    total = 0.0
    scale = -1.0 / (2.0 * sigma * sigma)
    for i in range(0, len(A), chunk):
        total += np.exp(_np_sq_dists(A[i:i + chunk], B) * scale).sum()
    return total


def mmd2_numpy(A, B, sigma: float = 1.0, unbiased: bool = False) -> float:
    """Untaped MMD^2 for large samples (chunked kernel sums)."""
    A = np.asarray(A, dtype=float).reshape(len(A), -1)
    B = np.asarray(B, dtype=float).reshape(len(B), -1)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("MMD needs two non-empty samples")
    m, n = len(A), len(B)
    saa, sbb, sab = _kernel_sum(A, A, sigma), _kernel_sum(B, B, sigma), _kernel_sum(A, B, sigma)
    if unbiased:
        return (saa - m) / (m * (m - 1)) + (sbb - n) / (n * (n - 1)) - 2.0 * sab / (m * n)
    return saa / m**2 + sbb / n**2 - 2.0 * sab / (m * n)


def mmd_from_samples_conditional(phi_by_group, cfg: IpmConfig = IpmConfig(kind="MMD")) -> float:
    """Pooled two-sample MMD^2 over phi, as a stand-in for the x-averaged
    conditional discrepancy between p(phi | x, t=0) and p(phi | x, t=1).

    Diagnostic only: it ignores x, so it also picks up any covariate shift
    that phi inherits from x.
    """
    phi0, phi1 = (np.asarray(p, dtype=float) for p in phi_by_group)
    phi0 = phi0.reshape(len(phi0), -1)
    phi1 = phi1.reshape(len(phi1), -1)
    if len(phi0) == 0 or len(phi1) == 0:
        raise ValueError("both treatment groups need phi samples")
    sigma = _bandwidth(phi0, phi1, cfg)
    return mmd2_numpy(phi0, phi1, sigma, unbiased=cfg.unbiased_mmd)
