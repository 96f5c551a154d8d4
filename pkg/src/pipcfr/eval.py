"""Effect-estimation metrics, the example1 OLS oracle, and the IPM-vs-KL check.

Metric functions take datasets in original (unstandardized) units; when the
bundle carries a scaler, inputs are standardized on the way in and
predictions are mapped back to outcome units before comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numgrad as ng
from .datagen import Dataset, Example1Config
from .ipm import mmd2_numpy
from .nets import ModelBundle, f_heads


# ---------------------------------------------------------------------------
# Predictions in outcome units
# ---------------------------------------------------------------------------
def _model_x(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    bundle.check_x(x)
    if bundle.scaler is None:
        return x
    return (x - bundle.scaler.x_mean) / bundle.scaler.x_std


def potential_outcomes(bundle: ModelBundle, x) -> tuple[np.ndarray, np.ndarray]:
    """(f_0(x), f_1(x)) in original outcome units."""
    with ng.no_grad():
        f0, f1 = f_heads(bundle, _model_x(bundle, x))
    f0, f1 = f0.data, f1.data
    if bundle.scaler is not None:
        f0, f1 = bundle.scaler.inverse_y(f0), bundle.scaler.inverse_y(f1)
    return f0, f1


def ite(bundle: ModelBundle, x) -> np.ndarray:
    f0, f1 = potential_outcomes(bundle, x)
    return f1 - f0


def pehe_from_arrays(tau_hat, tau_true) -> float:
    tau_hat = np.asarray(tau_hat, dtype=float).reshape(-1)
    tau_true = np.asarray(tau_true, dtype=float).reshape(-1)
    if tau_hat.shape != tau_true.shape:
        raise ng.ShapeError(f"tau_hat {tau_hat.shape} vs tau_true {tau_true.shape}")
    return float(np.sqrt(np.mean((tau_hat - tau_true) ** 2)))


def pehe(bundle: ModelBundle, ds: Dataset) -> float:
    """Root-mean-square ITE error over ``ds``."""
    if ds.tau_true is None:
        raise ValueError("PEHE needs tau_true")
    return pehe_from_arrays(ite(bundle, ds.x), ds.tau_true)


def residual_moments(residuals) -> tuple[float, float]:
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.size == 0:
        raise ValueError("no residuals")
    var = float(r.var(ddof=1)) if r.size > 1 else 0.0
    return float(r.mean()), var


def counterfactual_variance(bundle: ModelBundle, ds: Dataset) -> tuple[float, float]:
    """Mean and unbiased variance of f(x, 1-t) - y_{1-t} over ``ds``.

    The target is the noiseless potential outcome of the opposite arm.
    """
    if not ds.has_potential_outcomes:
        raise ValueError("counterfactual variance needs both potential outcomes")
    f0, f1 = potential_outcomes(bundle, ds.x)
    treated = ds.t == 1
    pred_cf = np.where(treated, f0, f1)
    true_cf = np.where(treated, ds.y0_true, ds.y1_true)
    return residual_moments(pred_cf - true_cf)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
@dataclass
class MetricsReport:
    method: str
    pehe_in: float
    pehe_out: float
    cf_error_mean: float
    cf_error_var: float
    seed: Optional[int] = None
    config_fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("pehe_in", "pehe_out"):
            v = getattr(self, name)
            if not (v >= 0 or math.isnan(v)):
                raise ValueError(f"{name} must be non-negative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate(bundle: ModelBundle, train_ds: Dataset, test_ds: Dataset, seed: Optional[int] = None,
             fingerprint: str = "") -> MetricsReport:
    """PEHE on the training split (in) and test split (out), plus counterfactual error moments on test."""
    nan = math.nan
    p_in = pehe(bundle, train_ds) if train_ds.tau_true is not None else nan
    p_out = pehe(bundle, test_ds) if test_ds.tau_true is not None else nan
    cm, cv = counterfactual_variance(bundle, test_ds) if test_ds.has_potential_outcomes else (nan, nan)
    return MetricsReport(bundle.method.value, p_in, p_out, cm, cv, seed, fingerprint)


@dataclass
class Aggregate:
    mean: float
    std: float      # across runs (n-1 denominator)
    sem: float      # standard error of the mean
    n: int
    values: list

    def cell(self, which: str = "std") -> str:
        spread = self.std if which == "std" else self.sem
        return f"{self.mean:.2f} ± {spread:.2f}"


def aggregate(values: Sequence[float]) -> Aggregate:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    if v.size == 0:
        return Aggregate(math.nan, math.nan, math.nan, 0, [])
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return Aggregate(float(v.mean()), std, std / math.sqrt(v.size), int(v.size), v.tolist())


REPORT_METRICS = ("pehe_in", "pehe_out", "cf_error_var")


def format_report(rows: Sequence[dict], group_by: Sequence[str] = ("method",),
                  metrics: Sequence[str] = REPORT_METRICS) -> str:
    """Text table of ``mean ± std`` per group; a second block gives ``mean ± sem``."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r.get(k) for k in group_by), []).append(r)
    header = list(group_by) + ["runs"] + list(metrics)
    blocks = []
    for which, title in (("std", "mean ± std across runs"), ("sem", "mean ± std of the mean")):
        lines = [f"# {title}", " | ".join(header)]
        for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
            rs = groups[key]
            cells = [aggregate([r.get(m, math.nan) for r in rs]).cell(which) for m in metrics]
            lines.append(" | ".join([str(k) for k in key] + [str(len(rs))] + cells))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# example1 oracle: closed-form OLS with and without post-treatment features
# ---------------------------------------------------------------------------
OLS_RIDGE = 1e-10


def ols_fit(X: np.ndarray, y: np.ndarray, ridge: float = OLS_RIDGE) -> np.ndarray:
    A = X.T @ X
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("singular design matrix")
    return np.linalg.solve(A + ridge * np.eye(A.shape[0]), X.T @ y)


@dataclass
class OracleCase:
    name: str
    features: str
    per_arm: dict      # arm -> {"mean", "var", "n", "target_mean", "target_var"}
    coef: list


def example1_oracle(cfg: Example1Config, n_mc: int = 10**6, min_n: int = 10**5) -> dict:
    """Counterfactual error of three OLS regressors on the example1 SEM.

    (a) Y ~ X, T       (b) Y ~ X, T, S       (c) Y ~ X, T, u_s

    Counterfactuals flip T and keep the observed S (and u_s); the truth
    y(1-t) draws fresh outcome noise. Errors are grouped by observed arm.
    """
    if n_mc < min_n:
        raise ValueError(f"n_mc must be at least {min_n}")
    rng = np.random.default_rng(cfg.seed)
    X = rng.normal(0.0, cfg.sigma_x, n_mc)
    T = (X + rng.normal(0.0, cfg.sigma_t, n_mc) > 0).astype(float)
    u = rng.normal(0.0, cfg.sigma_u, n_mc)
    S = X + cfg.alpha1 * T + u
    Y = X + cfg.alpha2 * T + S + rng.normal(0.0, 1.0, n_mc)
    Tc = 1.0 - T
    S_cf = X + cfg.alpha1 * Tc + u
    Y_cf = X + cfg.alpha2 * Tc + S_cf + rng.normal(0.0, 1.0, n_mc)
    one = np.ones(n_mc)
    designs = {
        "a": ("X,T", np.column_stack([one, X, T]), np.column_stack([one, X, Tc])),
        "b": ("X,T,S", np.column_stack([one, X, T, S]), np.column_stack([one, X, Tc, S])),
        "c": ("X,T,u_s", np.column_stack([one, X, T, u]), np.column_stack([one, X, Tc, u])),
    }
    targets = {
        "a": lambda t: (0.0, cfg.sigma_u ** 2 + 1.0),
        "b": lambda t: ((2 * t - 1) * cfg.alpha1, 1.0),
        "c": lambda t: (0.0, 1.0),
    }
    out = {}
    for name, (feat, D, D_cf) in designs.items():
        coef = ols_fit(D, Y)
        err = D_cf @ coef - Y_cf
        per_arm = {}
        for arm in (0, 1):
            e = err[T == arm]
            tm, tv = targets[name](arm)
            per_arm[arm] = {"mean": float(e.mean()), "var": float(e.var(ddof=1)), "n": int(e.size),
                            "target_mean": tm, "target_var": tv}
        pooled_mean, pooled_var = residual_moments(err)
        out[name] = OracleCase(name, feat, per_arm, coef.tolist())
        out[name].per_arm["all"] = {"mean": pooled_mean, "var": pooled_var, "n": n_mc}
    return out


def oracle_to_dict(result: dict) -> dict:
    return {k: {"features": c.features, "coef": c.coef,
                "per_arm": {str(a): v for a, v in c.per_arm.items()}} for k, c in result.items()}


# ---------------------------------------------------------------------------
# IPM vs KL inequality on samples with known conditionals
# ---------------------------------------------------------------------------
@dataclass
class Prop2Result:
    lhs: float       # E_x MMD(p(phi | x, t=0), p(phi | x, t=1)), RBF sigma=1
    rhs: float       # E_x sqrt(2/(pi0 pi1) E_phi KL(p(t|x,phi) || p(t|x)))
    std: float       # standard error of lhs - rhs from data blocks
    holds: bool


def _bern_kl(p, q):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    q = np.clip(q, 1e-12, 1 - 1e-12)
    return p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q))


def _prop2_terms(xg, t, phi, p1x, p1xphi, sigma):
    lhs = rhs = 0.0
    n = len(xg)
    for level in np.unique(xg):
        m = xg == level
        w = m.sum() / n
        pi1 = float(np.mean(p1x[m]))
        pi0 = 1.0 - pi1
        a, b = phi[m & (t == 0)], phi[m & (t == 1)]
        if len(a) < 2 or len(b) < 2:
            raise ValueError(f"covariate level {level} lacks samples in one treatment group")
        lhs += w * math.sqrt(max(0.0, mmd2_numpy(a, b, sigma, unbiased=True)))
        kl = max(0.0, float(np.mean(_bern_kl(p1xphi[m], p1x[m]))))  # rounding can dip below 0
        rhs += w * math.sqrt(2.0 / (pi0 * pi1) * kl)
    return lhs, rhs


def prop2_check(x, t, phi, p_t1_given_x, p_t1_given_x_phi, sigma: float = 1.0,
                n_blocks: int = 4) -> Prop2Result:
    """Compare the kernel IPM between treatment-conditional phi laws with the KL bound.

    ``x`` holds discrete covariate levels; ``p_t1_given_x`` and
    ``p_t1_given_x_phi`` are the known treatment probabilities for each sample.
    """
    xg = np.asarray(x).reshape(len(x), -1)
    _, xg = np.unique(xg, axis=0, return_inverse=True)
    xg = xg.reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    phi = np.asarray(phi, dtype=float).reshape(len(t), -1)
    p1x = np.asarray(p_t1_given_x, dtype=float).reshape(-1)
    p1xphi = np.asarray(p_t1_given_x_phi, dtype=float).reshape(-1)
    if np.any(p1x <= 0) or np.any(p1x >= 1):
        raise ValueError("overlap violated: p(t=1 | x) must lie strictly in (0, 1)")
    lhs, rhs = _prop2_terms(xg, t, phi, p1x, p1xphi, sigma)
    diffs = []
    for blk in np.array_split(np.arange(len(t)), n_blocks):
        bl, br = _prop2_terms(xg[blk], t[blk], phi[blk], p1x[blk], p1xphi[blk], sigma)
        diffs.append(bl - br)
    std = float(np.std(diffs, ddof=1) / math.sqrt(n_blocks)) if n_blocks > 1 else 0.0
    return Prop2Result(lhs, rhs, std, bool(lhs <= rhs + 3.0 * std))


@dataclass
class GaussianFamily:
    """phi | x, t ~ N(mu_x + t * shift_x, scale^2 I) with x on a few discrete levels."""

    pi1: np.ndarray       # p(t=1 | x) per level
    mu: np.ndarray        # (levels, d)
    shift: np.ndarray     # (levels, d)
    scale: float

    def sample(self, n: int, rng: np.random.Generator):
        L, d = self.mu.shape
        x = rng.integers(0, L, n)
        p1 = self.pi1[x]
        t = (rng.random(n) < p1).astype(float)
        phi = self.mu[x] + t[:, None] * self.shift[x] + self.scale * rng.normal(size=(n, d))
        # Bayes: log-odds of t=1 given (x, phi)
        z0 = phi - self.mu[x]
        z1 = z0 - self.shift[x]
        llr = ((z0 ** 2).sum(1) - (z1 ** 2).sum(1)) / (2 * self.scale ** 2)
        logit = np.log(p1 / (1 - p1)) + llr
        p1_phi = 0.5 * (1.0 + np.tanh(0.5 * logit))
        return x, t, phi, p1, p1_phi


def random_gaussian_family(rng: np.random.Generator, independent: bool = False,
                           strong: bool = False) -> GaussianFamily:
    L = int(rng.integers(1, 4))
    d = int(rng.integers(1, 4))
    pi1 = rng.uniform(0.2, 0.8, L)
    mu = rng.normal(0.0, 1.0, (L, d))
    if independent:
        shift, scale = np.zeros((L, d)), float(rng.uniform(0.3, 2.0))
    elif strong:
        # phi = t + small noise
        mu, shift, scale = np.zeros((L, d)), np.ones((L, d)), 0.1
    else:
        shift, scale = rng.normal(0.0, 1.0, (L, d)), float(rng.uniform(0.3, 2.0))
    return GaussianFamily(pi1, mu, shift, scale)
