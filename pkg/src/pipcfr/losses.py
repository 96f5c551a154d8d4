"""Training objectives and error diagnostics.

Each loss is evaluated so that gradients reach only the networks its
update step owns:

=========  ==========================  ===================================
loss       trains                      held fixed
=========  ==========================  ===================================
loss_p     g, g_tilde                  psi_eta (phi detached)
loss_kl    psi_eta                     g (target), g_tilde (frozen weights)
loss_y     psi_eta and/or psi_alpha,h  whichever side is not being trained
loss_pip   f                           q, psi_eta, psi_alpha
=========  ==========================  ===================================

``strict=False`` drops every detach for joint-gradient ablations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Literal, Optional

import numpy as np

from . import numgrad as ng
from .ipm import IpmConfig, ipm, mmd_from_samples_conditional
from .nets import ModelBundle, f_heads, phi, propensity, q_heads, select_arm
from .numgrad import Tensor

KlSign = Literal["as_written", "flipped"]


@dataclass
class Batch:
    x: np.ndarray
    t: np.ndarray
    s: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        n = len(self.t)
        if n == 0:
            raise ValueError("empty batch")
        if len(self.x) != n or len(self.y) != n or (self.s is not None and len(self.s) != n):
            raise ng.ShapeError("batch arrays disagree on the number of samples")

    @classmethod
    def from_dataset(cls, ds, idx=None) -> "Batch":
        if idx is None:
            return cls(ds.x, ds.t, ds.s, ds.y)
        return cls(ds.x[idx], ds.t[idx], ds.s[idx], ds.y[idx])

    @property
    def treated_fraction(self) -> float:
        return float(self.t.mean())

    def has_both_groups(self) -> bool:
        u = self.treated_fraction
        return 0.0 < u < 1.0


def _const(t: Tensor) -> Tensor:
    return Tensor(t.data)


def _bernoulli_pair(p1: Tensor) -> tuple[Tensor, Tensor]:
    return 1.0 - p1, p1


def loss_p(bundle: ModelBundle, batch: Batch, strict: bool = True) -> Tensor:
    """-mean[log g_tilde(t | x, phi) + log g(t | x)], phi detached."""
    ph = phi(bundle, batch.s)
    if strict:
        ph = _const(ph)
    g1 = propensity(bundle, batch.x)
    gt1 = propensity(bundle, batch.x, ph)
    t = batch.t
    # probabilities of the observed class
    g_obs = g1 * t + (1.0 - g1) * (1.0 - t)
    gt_obs = gt1 * t + (1.0 - gt1) * (1.0 - t)
    return -(ng.log(gt_obs) + ng.log(g_obs)).mean()


def loss_kl(bundle: ModelBundle, batch: Batch, gamma: float = 1.0,
            kl_sign: KlSign = "as_written", strict: bool = True) -> Tensor:
    """gamma * mean_i sum_t g(t|x_i) (log g_tilde(t|x_i,phi_i) - log g(t|x_i)).

    As written this is -gamma * KL(g || g_tilde), so minimizing it drives
    g_tilde away from g; ``kl_sign="flipped"`` minimizes +gamma * KL instead.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if kl_sign not in ("as_written", "flipped"):
        raise ValueError(f"unknown kl_sign {kl_sign!r}")
    g1 = propensity(bundle, batch.x, frozen=strict)
    if strict:
        g1 = _const(g1)
    gt1 = propensity(bundle, batch.x, phi(bundle, batch.s), frozen=strict)
    g0, g1_ = _bernoulli_pair(g1)
    gt0, gt1_ = _bernoulli_pair(gt1)
    terms = g0 * (ng.log(gt0) - ng.log(g0)) + g1_ * (ng.log(gt1_) - ng.log(g1_))
    val = terms.mean() * gamma
    return val if kl_sign == "as_written" else -val


def balance_weights(t: np.ndarray) -> tuple[np.ndarray, bool]:
    """beta_i = t/(2u) + (1-t)/(2(1-u)); unit weights when u is 0 or 1."""
    t = np.asarray(t, dtype=float)
    u = float(t.mean())
    if not 0.0 < u < 1.0:
        return np.ones_like(t), False
    return t / (2.0 * u) + (1.0 - t) / (2.0 * (1.0 - u)), True


class LossCounters:
    """Counts degenerate single-group batches seen by ``loss_y``/``loss_cfr``."""

    def __init__(self):
        self.ipm_skipped = 0
        self.unit_weights = 0

    def as_dict(self) -> dict:
        return {"ipm_skipped": self.ipm_skipped, "unit_weights": self.unit_weights}


def _weighted_mse_plus_ipm(pred: Tensor, rep: Optional[Tensor], batch: Batch,
                           ipm_cfg: Optional[IpmConfig], counters: Optional[LossCounters]) -> Tensor:
    w, ok = balance_weights(batch.t)
    if not ok and counters is not None:
        counters.unit_weights += 1
    loss = (ng.square(pred - batch.y) * w).mean()
    if rep is None or ipm_cfg is None:
        return loss
    if not ok:
        if counters is not None:
            counters.ipm_skipped += 1
        return loss
    treated = batch.t == 1
    return loss + ipm(ng.take_rows(rep, np.flatnonzero(~treated)), ng.take_rows(rep, np.flatnonzero(treated)),
                      ipm_cfg)


def loss_y(bundle: ModelBundle, batch: Batch, ipm_cfg: Optional[IpmConfig],
           train: Literal["all", "psi_eta", "q"] = "all", counters: Optional[LossCounters] = None,
           phi_t: Optional[Tensor] = None) -> Tensor:
    """mean beta_i (q(x_i, t_i, phi_i) - y_i)^2 + IPM(psi_alpha reps of t=0 vs t=1).

    ``train`` picks which side keeps its gradient: "psi_eta" freezes psi_alpha
    and h (the IPM term is then constant and left out), "q" detaches phi.
    """
    if train not in ("all", "psi_eta", "q"):
        raise ValueError(f"bad train selector {train!r}")
    if phi_t is None:
        phi_t = phi(bundle, batch.s, frozen=(train == "q"))
    if train == "q":
        phi_t = _const(phi_t)
    frozen_q = train == "psi_eta"
    rep = bundle.psi_alpha(batch.x, frozen=frozen_q)
    z = ng.concat([rep, phi_t], axis=1)
    h0 = bundle.h0(z, frozen=frozen_q).reshape(-1)
    h1 = bundle.h1(z, frozen=frozen_q).reshape(-1)
    pred = select_arm(h0, h1, batch.t)
    return _weighted_mse_plus_ipm(pred, None if frozen_q else rep, batch, ipm_cfg, counters)


def loss_pip(bundle: ModelBundle, batch: Batch, strict: bool = True,
             q_cf: Optional[np.ndarray] = None) -> Tensor:
    """mean[a^2 + b^2 - 2ab], a = f(x,t) - y, b = f(x,1-t) - q(x,1-t,phi).

    q is treated as a fixed label. ``q_cf`` may pass precomputed
    counterfactual pseudo-outcomes q(x, 1-t, phi).
    """
    f0, f1 = f_heads(bundle, batch.x)
    t = batch.t
    f_fact = select_arm(f0, f1, t)
    f_cf = select_arm(f0, f1, 1.0 - t)
    if q_cf is None:
        q0, q1 = q_heads(bundle, batch.x, phi(bundle, batch.s, frozen=strict), frozen=strict)
        qc = select_arm(q0, q1, 1.0 - t)
        q_cf = _const(qc) if strict else qc
    a = f_fact - batch.y
    b = f_cf - q_cf
    return (ng.square(a) + ng.square(b) - 2.0 * a * b).mean()


def factual_mse(bundle: ModelBundle, batch: Batch) -> Tensor:
    f0, f1 = f_heads(bundle, batch.x)
    return ng.square(select_arm(f0, f1, batch.t) - batch.y).mean()


def level_anchor(bundle: ModelBundle, batch: Batch) -> Tensor:
    """Factual MSE that moves only the level (f_0 + f_1)/2 of f.

    loss_pip depends on f only through f_1 - f_0, which leaves the common
    level free. Here f_t is rewritten as level + (2t-1) * tau_hat/2 with
    tau_hat held constant, so the effect estimate gets no gradient.
    """
    f0, f1 = f_heads(bundle, batch.x)
    half_tau = _const((f1 - f0) * 0.5)
    pred = (f0 + f1) * 0.5 + half_tau * (2.0 * batch.t - 1.0)
    return ng.square(pred - batch.y).mean()


def loss_tarnet(bundle: ModelBundle, batch: Batch) -> Tensor:
    return factual_mse(bundle, batch)


def loss_cfr(bundle: ModelBundle, batch: Batch, ipm_cfg: IpmConfig,
             counters: Optional[LossCounters] = None) -> Tensor:
    """Balanced factual MSE plus IPM over f's own trunk representation."""
    bundle.check_x(batch.x)
    rep = bundle.f_trunk(batch.x)
    f0 = bundle.f0(rep).reshape(-1)
    f1 = bundle.f1(rep).reshape(-1)
    return _weighted_mse_plus_ipm(select_arm(f0, f1, batch.t), rep, batch, ipm_cfg, counters)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------
@dataclass
class Residuals:
    """Per-sample residuals at the observed arm t and the opposite arm 1-t.

    r = f - f*, r_tilde = q - f*, r_ddot = f - q (so r_ddot = r - r_tilde),
    with q evaluated at the sample's observed phi.
    """

    t: np.ndarray
    r: np.ndarray            # (n, 2): columns are arms 0 and 1
    r_tilde: Optional[np.ndarray]
    r_ddot: Optional[np.ndarray]

    def at(self, arr: np.ndarray, cf: bool) -> np.ndarray:
        idx = (1 - self.t if cf else self.t).astype(int)
        return arr[np.arange(len(idx)), idx]


@dataclass
class Diagnostics:
    eps_F: float
    eps_CF: float
    eps_CF_tilde: float
    eps_CF_ddot: float
    eps_ITE: float
    eps_PIP: float
    ipm_phi: float
    Q0: float
    Q1: float
    bound_gap: float
    cross_F_CF: float = math.nan      # E[r_t r_{1-t}]
    cross_F_CF_se: float = math.nan
    eps_ITE_se: float = math.nan
    decomposition_se: float = math.nan  # std error of eps_ITE - (eps_F + eps_CF - 2 cross)

    KEYS = ("eps_F", "eps_CF", "eps_CF_tilde", "eps_CF_ddot", "eps_ITE", "eps_PIP",
            "ipm_phi", "Q0", "Q1", "bound_gap")

    def record(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in self.KEYS}

    def to_json(self) -> str:
        return json.dumps({k: (None if not math.isfinite(v) else v) for k, v in self.record().items()},
                          sort_keys=True)


def _se(v: np.ndarray) -> float:
    return float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else math.nan


def residuals(bundle: ModelBundle, ds) -> Residuals:
    if ds.y0_true is None or ds.y1_true is None:
        raise ValueError("diagnostics need noiseless potential outcomes (y0_true, y1_true)")
    with ng.no_grad():
        f0, f1 = f_heads(bundle, ds.x)
        fstar = np.stack([ds.y0_true, ds.y1_true], axis=1)
        f = np.stack([f0.data, f1.data], axis=1)
        r = f - fstar
        r_tilde = r_ddot = None
        if bundle.method.is_pipcfr:
            q0, q1 = q_heads(bundle, ds.x, phi(bundle, ds.s))
            q = np.stack([q0.data, q1.data], axis=1)
            r_tilde = q - fstar
            r_ddot = f - q
    return Residuals(ds.t.astype(int), r, r_tilde, r_ddot)


def diagnostics(bundle: ModelBundle, ds, ipm_cfg: IpmConfig = IpmConfig(kind="MMD")) -> Diagnostics:
    """Monte-Carlo estimates of the error functionals on a labeled dataset.

    Group weights u_t are the empirical treatment frequencies, so every
    u-weighted sum collapses to a plain mean over samples.
    """
    if getattr(ds, "tau_true", None) is None:
        raise ValueError("diagnostics need tau_true")
    res = residuals(bundle, ds)
    t = res.t
    r_f = res.at(res.r, cf=False)
    r_cf = res.at(res.r, cf=True)
    ite = (res.r[:, 1] - res.r[:, 0]) ** 2
    cross = r_f * r_cf
    decomp = ite - (r_f ** 2 + r_cf ** 2 - 2.0 * cross)
    out = dict(
        eps_F=float(np.mean(r_f ** 2)),
        eps_CF=float(np.mean(r_cf ** 2)),
        eps_ITE=float(ite.mean()),
        cross_F_CF=float(cross.mean()),
        cross_F_CF_se=_se(cross),
        eps_ITE_se=_se(ite),
        decomposition_se=_se(decomp),
    )
    nan = math.nan
    if res.r_tilde is None:
        out.update(eps_CF_tilde=nan, eps_CF_ddot=nan, eps_PIP=nan, ipm_phi=nan, Q0=nan, Q1=nan, bound_gap=nan)
        return Diagnostics(**out)
    rt_cf = res.at(res.r_tilde, cf=True)
    rd_cf = res.at(res.r_ddot, cf=True)
    eps_tilde = float(np.mean(rt_cf ** 2))
    Q = [float(np.mean(rt_cf[t == k] ** 2)) if np.any(t == k) else nan for k in (0, 1)]
    epsF_t = [float(np.mean(r_f[t == k] ** 2)) if np.any(t == k) else nan for k in (0, 1)]
    u = [float(np.mean(t == k)) for k in (0, 1)]
    with ng.no_grad():
        ph = phi(bundle, ds.s).data
    if np.all(t == 0) or np.all(t == 1):
        ipm_phi = nan
    else:
        ipm_phi = mmd_from_samples_conditional((ph[t == 0], ph[t == 1]), ipm_cfg)
    delta = max(0.0, float(np.mean(r_f * rd_cf)) / eps_tilde) if eps_tilde > 0 else 0.0
    eps_pip = float(np.mean((r_f - rd_cf) ** 2))
    rhs = (eps_pip + ipm_phi + (2.0 * delta + 1.0) * eps_tilde
           + 2.0 * sum(u[k] * math.sqrt(epsF_t[k] * Q[k]) for k in (0, 1) if u[k] > 0))
    out.update(eps_CF_tilde=eps_tilde, eps_CF_ddot=float(np.mean(rd_cf ** 2)), eps_PIP=eps_pip,
               ipm_phi=float(ipm_phi), Q0=Q[0], Q1=Q[1], bound_gap=float(rhs - out["eps_ITE"]))
    return Diagnostics(**out)
