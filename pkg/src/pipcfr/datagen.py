"""Synthetic observational datasets with post-treatment variables.

Every generator simulates both treatment arms from one set of noise draws
and then selects the observed arm, so ``y`` equals the noisy potential
outcome of the observed treatment bit for bit. ``y0_true``/``y1_true`` are
the same simulation with the outcome noise switched off (structural
noise in ``s`` is kept), and ``tau_true = y1_true - y0_true``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------
class Sample(NamedTuple):
    x: np.ndarray
    t: int
    s: np.ndarray
    y: float
    y0_true: Optional[float] = None
    y1_true: Optional[float] = None
    tau_true: Optional[float] = None


@dataclass
class Dataset:
    x: np.ndarray
    t: np.ndarray
    s: np.ndarray
    y: np.ndarray
    y0_true: Optional[np.ndarray] = None
    y1_true: Optional[np.ndarray] = None
    tau_true: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        n = self.x.shape[0]
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        s = np.asarray(self.s, dtype=float)
        self.s = s.reshape(n, -1) if s.size or s.ndim > 1 else np.zeros((n, 0))
        for name in ("t", "y"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, x has {n}")
        if self.s.shape[0] != n:
            raise ValueError(f"s has {self.s.shape[0]} rows, x has {n}")
        if not np.all((self.t == 0) | (self.t == 1)):
            raise ValueError("treatment must be binary {0, 1}")
        for name in ("y0_true", "y1_true", "tau_true"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).reshape(-1)
                if v.shape[0] != n:
                    raise ValueError(f"{name} has {v.shape[0]} rows, x has {n}")
                setattr(self, name, v)
        if self.tau_true is None and self.y0_true is not None and self.y1_true is not None:
            self.tau_true = self.y1_true - self.y0_true

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Sample:
        opt = lambda v: None if v is None else float(v[i])  # noqa: E731
        return Sample(self.x[i], int(self.t[i]), self.s[i], float(self.y[i]),
                      opt(self.y0_true), opt(self.y1_true), opt(self.tau_true))

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    @property
    def s_dim(self) -> int:
        return self.s.shape[1]

    @property
    def has_potential_outcomes(self) -> bool:
        return self.y0_true is not None and self.y1_true is not None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        sel = lambda v: None if v is None else v[idx]  # noqa: E731
        return Dataset(self.x[idx], self.t[idx], self.s[idx], self.y[idx],
                       sel(self.y0_true), sel(self.y1_true), sel(self.tau_true),
                       {k: v[idx] for k, v in self.extras.items()}, dict(self.meta))


def config_hash(cfg) -> str:
    d = asdict(cfg) if is_dataclass(cfg) else dict(cfg)
    blob = json.dumps(d, sort_keys=True, default=lambda o: np.asarray(o).tolist())
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _finish(x, t, s0, s1, y0n, y1n, y0, y1, extras, meta) -> Dataset:
    tb = t.astype(bool)
    s = np.where(tb[:, None], s1, s0)
    y = np.where(tb, y1n, y0n)
    extras = dict(extras, y0_noisy=y0n, y1_noisy=y1n)
    return Dataset(x, t.astype(float), s, y, y0, y1, y1 - y0, extras, meta)


# ---------------------------------------------------------------------------
# example1: a scalar SEM with exogenous noise u_s in S
# ---------------------------------------------------------------------------
@dataclass
class Example1Config:
    sigma_x: float = 1.0
    sigma_t: float = 1.0
    sigma_u: float = 1.0
    alpha1: float = 2.0
    alpha2: float = 1.0
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_t, self.sigma_u) <= 0:
            raise ValueError("all sigmas must be positive")
        if self.n <= 0:
            raise ValueError("n must be positive")


def _example1_arms(X, u_s, eps_y, alpha1, alpha2, t):
    S = X + alpha1 * t + u_s
    Y = X + alpha2 * t + S + eps_y
    return S, Y


def gen_example1(cfg: Example1Config) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    X = rng.normal(0.0, cfg.sigma_x, n)
    t_star = X + rng.normal(0.0, cfg.sigma_t, n)
    T = (t_star > 0).astype(float)
    u_s = rng.normal(0.0, cfg.sigma_u, n)
    eps_y = rng.normal(0.0, 1.0, n)
    zeros, ones = np.zeros(n), np.ones(n)
    s0, y0n = _example1_arms(X, u_s, eps_y, cfg.alpha1, cfg.alpha2, zeros)
    s1, y1n = _example1_arms(X, u_s, eps_y, cfg.alpha1, cfg.alpha2, ones)
    _, y0 = _example1_arms(X, u_s, 0.0, cfg.alpha1, cfg.alpha2, zeros)
    _, y1 = _example1_arms(X, u_s, 0.0, cfg.alpha1, cfg.alpha2, ones)
    return _finish(X[:, None], T, s0[:, None], s1[:, None], y0n, y1n, y0, y1,
                   {"u_s": u_s}, {"kind": "example1", "config_hash": config_hash(cfg)})


# ---------------------------------------------------------------------------
# Recursive sequence (IHDP-style stand-in)
# ---------------------------------------------------------------------------
BETA0_SPEC = ((0.0, 1.0, 2.0, 3.0, 4.0), (0.5, 0.2, 0.15, 0.1, 0.05))
BETA1_SPEC = ((-2.0, -1.0, 0.0, 1.0, 2.0), (0.2, 0.2, 0.2, 0.2, 0.2))


def _check_spec(spec, name):
    values, probs = spec
    if len(values) != len(probs):
        raise ValueError(f"{name}: {len(values)} values but {len(probs)} probabilities")
    if abs(sum(probs) - 1.0) > 1e-9 or min(probs) < 0:
        raise ValueError(f"{name}: probabilities must be non-negative and sum to 1")


def sample_discrete(spec, size, rng: np.random.Generator) -> np.ndarray:
    values, probs = spec
    return rng.choice(np.asarray(values, dtype=float), size=size, p=np.asarray(probs, dtype=float))


@dataclass
class SequentialConfig:
    n_units: int = 747
    x_dim: int = 25
    m: int = 4
    K: int = 10
    C1: float = 0.5
    beta0_spec: tuple = BETA0_SPEC
    beta1_spec: tuple = BETA1_SPEC
    laplace_scale: float = 1.0
    treat_logit_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_units", "x_dim", "m", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.laplace_scale < 0:
            raise ValueError("laplace_scale must be non-negative")
        _check_spec(self.beta0_spec, "beta0_spec")
        _check_spec(self.beta1_spec, "beta1_spec")


def _last3_outcome(seq: np.ndarray) -> np.ndarray:
    # seq: (n, K, m); mean over the final three steps and all feature dims
    return seq[:, -3:, :].mean(axis=(1, 2))


def gen_sequential(cfg: SequentialConfig, x: Optional[np.ndarray] = None,
                   t: Optional[np.ndarray] = None) -> Dataset:
    if cfg.K < 3:
        raise ValueError("K must be >= 3: the outcome averages the last three steps")
    rng = np.random.default_rng(cfg.seed)
    n, K, m = cfg.n_units, cfg.K, cfg.m
    if x is None:
        x = rng.normal(size=(n, cfg.x_dim))
    else:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != n:
            raise ValueError(f"x has {x.shape[0]} rows, config expects n_units={n}")
    d = x.shape[1]
    beta0 = sample_discrete(cfg.beta0_spec, (d, m), rng)
    beta1 = sample_discrete(cfg.beta1_spec, (d, m), rng)
    if t is None:
        w = rng.normal(size=d) / np.sqrt(d)
        p = 1.0 / (1.0 + np.exp(-cfg.treat_logit_scale * (x @ w)))
        t = (rng.random(n) < p).astype(float)
    t = np.asarray(t, dtype=float)
    s_init = rng.normal(size=(n, m))
    noise = rng.laplace(0.0, cfg.laplace_scale, size=(n, K, m)) if cfg.laplace_scale > 0 \
        else np.zeros((n, K, m))

    def run(beta):
        seq = np.empty((n, K, m))
        seq[:, 0] = s_init
        drive = x @ beta
        running = s_init.copy()
        for k in range(1, K):
            seq[:, k] = drive + (cfg.C1 / k) * running + noise[:, k]
            running += seq[:, k]
        return seq

    seq0, seq1 = run(beta0), run(beta1)
    y0, y1 = _last3_outcome(seq0), _last3_outcome(seq1)
    return _finish(x, t, seq0.reshape(n, -1), seq1.reshape(n, -1), y0, y1, y0, y1,
                   {}, {"kind": "sequential", "config_hash": config_hash(cfg),
                        "beta0": beta0.tolist(), "beta1": beta1.tolist()})


# ---------------------------------------------------------------------------
# AR(1) sequence (News-style stand-in)
# ---------------------------------------------------------------------------
def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


@dataclass
class ARConfig:
    n_units: int = 5000
    m: int = 4
    K: int = 10
    C2: float = 1.0
    A: Optional[np.ndarray] = None  # defaults to 0.5 * I
    laplace_scale: float = 1.0
    x_dim: int = 10
    n_topics: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_units", "m", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        A = 0.5 * np.eye(self.m) if self.A is None else np.asarray(self.A, dtype=float)
        if A.shape != (self.m, self.m):
            raise ValueError(f"A must be {self.m}x{self.m}, got {A.shape}")
        rho = spectral_radius(A)
        if rho >= 0.9:
            raise ValueError(f"spectral radius of A is {rho:.4f}; must be < 0.9")
        self.A = A


def _topic_scores(rng, n, x_dim, n_topics):
    x = rng.normal(size=(n, x_dim))
    W = rng.normal(size=(x_dim, n_topics))
    logits = x @ W
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    z /= z.sum(axis=1, keepdims=True)
    z0c, z1c = rng.dirichlet(np.ones(n_topics), size=2)
    return x, np.stack([z @ z0c, z @ z1c], axis=1)


def gen_ar(cfg: ARConfig, scores: Optional[np.ndarray] = None, x: Optional[np.ndarray] = None,
           t: Optional[np.ndarray] = None) -> Dataset:
    """``scores[:, 0]`` is the per-unit base signal, ``scores[:, 1]`` the treated shift."""
    rng = np.random.default_rng(cfg.seed)
    n, m, K = cfg.n_units, cfg.m, cfg.K
    if scores is None:
        x_gen, scores = _topic_scores(rng, n, cfg.x_dim, cfg.n_topics)
        x = x_gen if x is None else x
    scores = np.asarray(scores, dtype=float).reshape(n, -1)
    if scores.shape[1] != 2:
        raise ValueError("scores must have two columns: base signal and treated shift")
    if x is None:
        x = scores.copy()
    if t is None:
        z = (scores[:, 1] - scores[:, 0]) / (scores.std() + 1e-12)
        t = (rng.random(n) < 1.0 / (1.0 + np.exp(-z))).astype(float)
    t = np.asarray(t, dtype=float)
    noise = rng.laplace(0.0, cfg.laplace_scale, size=(n, K, m)) if cfg.laplace_scale > 0 \
        else np.zeros((n, K, m))

    def run(tt):
        drive = cfg.C2 * (scores[:, 0] + tt * scores[:, 1])
        seq = np.empty((n, K, m))
        prev = np.zeros((n, m))
        for k in range(K):
            prev = drive[:, None] + prev @ cfg.A.T + noise[:, k]
            seq[:, k] = prev
        return seq

    seq0, seq1 = run(np.zeros(n)), run(np.ones(n))
    y0, y1 = _last3_outcome(seq0), _last3_outcome(seq1)
    return _finish(x, t, seq0.reshape(n, -1), seq1.reshape(n, -1), y0, y1, y0, y1,
                   {"scores": scores}, {"kind": "ar", "config_hash": config_hash(cfg)})


# ---------------------------------------------------------------------------
# Temporal causal system
# ---------------------------------------------------------------------------
@dataclass
class TemporalConfig:
    """State/treatment/post-treatment simulation over K steps.

    ``eps_u`` is the Laplace scale of the exogenous noise in the
    post-treatment blocks (v, m, a); ``eps_y`` scales the multiplicative
    outcome noise. Coefficients left as ``None`` are drawn from
    ``coef_seed`` so that different data seeds share one causal system.
    ``beta_t_assign`` drives treatment assignment, ``beta_t_out`` is the
    direct effect of the final treatment on the outcome.
    """

    n_samples: int = 10000
    feat_dim: int = 5
    K: int = 60
    alpha_window: float = 0.25
    gamma_y: float = 0.99
    C: Optional[float] = None  # defaults to the window length
    eps_u: float = 1.0
    eps_y: float = 0.1
    eps_x: float = 0.3
    eps_t: float = 0.5
    a_x: Optional[np.ndarray] = None
    beta_t_assign: Optional[np.ndarray] = None
    beta_v: Optional[np.ndarray] = None
    beta_m: Optional[np.ndarray] = None
    beta_a: Optional[np.ndarray] = None
    gamma_v: Optional[np.ndarray] = None
    gamma_m: Optional[np.ndarray] = None
    beta_y: Optional[np.ndarray] = None
    beta_m_out: Optional[np.ndarray] = None
    beta_a_out: Optional[np.ndarray] = None
    beta_t_out: Optional[float] = None
    coef_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_samples", "feat_dim", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.alpha_window <= 1:
            raise ValueError("alpha_window must lie in (0, 1]")
        if not 0 < self.gamma_y <= 1:
            raise ValueError("gamma_y must lie in (0, 1]")
        for name in ("eps_u", "eps_y", "eps_x", "eps_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        k0 = self.window_start
        if not 1 <= k0 <= self.K:
            raise ValueError(f"window start k0={k0} outside [1, K={self.K}]")
        self._fill_coefficients()

    @property
    def window_start(self) -> int:
        return self.K - int(np.floor(self.alpha_window * self.K))

    @property
    def window_len(self) -> int:
        return self.K - self.window_start + 1

    def _fill_coefficients(self):
        N = self.feat_dim
        rng = np.random.default_rng(self.coef_seed)
        draws = {
            "a_x": lambda: rng.normal(0.0, 0.3, N),
            "beta_t_assign": lambda: rng.normal(0.0, 0.5 / np.sqrt(N), N),
            "beta_v": lambda: rng.normal(0.0, 1.0 / np.sqrt(N), (N, N)),
            "beta_m": lambda: rng.normal(0.0, 1.0 / np.sqrt(N), (N, N)),
            "beta_a": lambda: rng.normal(0.0, 1.0 / np.sqrt(N), (N, N)),
            "gamma_v": lambda: rng.normal(0.0, 1.0, N),
            "gamma_m": lambda: rng.normal(0.0, 1.0, N),
            "beta_y": lambda: rng.normal(0.0, 1.0 / np.sqrt(N), N),
            "beta_m_out": lambda: rng.normal(0.0, 1.0 / np.sqrt(N), N),
            "beta_a_out": lambda: rng.normal(0.0, 1.0 / np.sqrt(N), N),
        }
        # fixed draw order keeps coefficients stable when some are user-supplied
        for name, draw in draws.items():
            val = draw()
            cur = getattr(self, name)
            setattr(self, name, val if cur is None else np.asarray(cur, dtype=float))
        if self.beta_t_out is None:
            self.beta_t_out = float(self.window_len)
        if self.C is None:
            self.C = float(self.window_len)
        shapes = {"a_x": (N,), "beta_t_assign": (N,), "beta_v": (N, N), "beta_m": (N, N),
                  "beta_a": (N, N), "gamma_v": (N,), "gamma_m": (N,), "beta_y": (N,),
                  "beta_m_out": (N,), "beta_a_out": (N,)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def gen_temporal(cfg: TemporalConfig) -> Dataset:
    """Sample x is the final pre-treatment state x_K; s is the (v, m, a)
    trajectory over the outcome window k0..K; t is the final treatment t_K."""
    rng = np.random.default_rng(cfg.seed)
    n, N, K = cfg.n_samples, cfg.feat_dim, cfg.K
    k0, W = cfg.window_start, cfg.window_len
    lap = lambda scale, size: rng.laplace(0.0, scale, size) if scale > 0 else np.zeros(size)  # noqa: E731

    xs = np.empty((n, K, N))
    ts = np.empty((n, K))
    ev = lap(cfg.eps_u, (n, K, N))
    em = lap(cfg.eps_u, (n, K, N))
    ea = lap(cfg.eps_u, (n, K, N))
    eu = lap(cfg.eps_y, (n, K))
    x = rng.normal(size=(n, N))
    for k in range(K):
        xs[:, k] = x
        logit = x @ cfg.beta_t_assign + lap(cfg.eps_t, n)
        ts[:, k] = (rng.random(n) < _sigmoid(logit)).astype(float)
        if k < K - 1:
            x = x + ts[:, k][:, None] * cfg.a_x[None, :] + lap(cfg.eps_x, (n, N))

    def blocks(tk):
        v = xs @ cfg.beta_v.T + tk[:, :, None] * cfg.gamma_v + ev
        m = xs @ cfg.beta_m.T + tk[:, :, None] * cfg.gamma_m + em
        a = xs @ cfg.beta_a.T + ea
        return v, m, a

    def arm(t_last, noisy):
        tk = ts.copy()
        tk[:, -1] = t_last
        v, m, a = blocks(tk)
        sl = slice(k0 - 1, K)
        signal = xs[:, sl] @ cfg.beta_y + m[:, sl] @ cfg.beta_m_out + a[:, sl] @ cfg.beta_a_out
        mult = 1.0 + eu[:, sl] if noisy else 1.0
        decay = cfg.gamma_y ** (K - np.arange(k0, K + 1))
        y = ((signal * mult) @ decay + t_last * cfg.beta_t_out) / cfg.C
        s = np.concatenate([v[:, sl], m[:, sl], a[:, sl]], axis=2).reshape(n, W * 3 * N)
        return s, y

    zeros, ones = np.zeros(n), np.ones(n)
    s0, y0n = arm(zeros, True)
    s1, y1n = arm(ones, True)
    _, y0 = arm(zeros, False)
    _, y1 = arm(ones, False)
    return _finish(xs[:, -1], ts[:, -1], s0, s1, y0n, y1n, y0, y1,
                   {}, {"kind": "temporal", "config_hash": config_hash(cfg)})


# ---------------------------------------------------------------------------
# Splitting and standardization
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")


def split_indices(n: int, spec: SplitSpec):
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_tr = int(round(spec.train_frac * n))
    n_va = int(round(spec.val_frac * n))
    parts = perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]
    for name, p in zip(("train", "val", "test"), parts):
        if len(p) == 0:
            raise ValueError(f"{name} split of {n} samples is empty")
    return parts


def split(ds: Dataset, spec: SplitSpec = SplitSpec()):
    return tuple(ds.subset(idx) for idx in split_indices(len(ds), spec))


@dataclass
class Scaler:
    x_mean: np.ndarray
    x_std: np.ndarray
    s_mean: np.ndarray
    s_std: np.ndarray
    y_mean: float
    y_std: float

    @staticmethod
    def _fit_cols(a: np.ndarray):
        mean = a.mean(axis=0) if len(a) else np.zeros(a.shape[1])
        std = a.std(axis=0) if len(a) else np.ones(a.shape[1])
        degenerate = ~(std > 0)
        # constant features pass through untouched
        mean = np.where(degenerate, 0.0, mean)
        std = np.where(degenerate, 1.0, std)
        return mean, std

    @classmethod
    def fit(cls, ds: Dataset) -> "Scaler":
        if len(ds) == 0:
            raise ValueError("cannot fit a scaler on an empty dataset")
        xm, xs = cls._fit_cols(ds.x)
        sm, ss = cls._fit_cols(ds.s)
        ym, ys = cls._fit_cols(ds.y[:, None])
        for name, v in (("x", xs), ("s", ss), ("y", ys)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite spread in {name}; values too large to standardize")
        return cls(xm, xs, sm, ss, float(ym[0]), float(ys[0]))

    def transform(self, ds: Dataset) -> Dataset:
        if ds.x_dim != len(self.x_mean) or ds.s_dim != len(self.s_mean):
            raise ValueError(f"scaler fitted on x_dim={len(self.x_mean)}, s_dim={len(self.s_mean)}; "
                             f"dataset has x_dim={ds.x_dim}, s_dim={ds.s_dim}")
        ty = lambda v: None if v is None else (v - self.y_mean) / self.y_std  # noqa: E731
        out = Dataset((ds.x - self.x_mean) / self.x_std, ds.t.copy(), (ds.s - self.s_mean) / self.s_std,
                      ty(ds.y), ty(ds.y0_true), ty(ds.y1_true),
                      None if ds.tau_true is None else ds.tau_true / self.y_std,
                      dict(ds.extras), dict(ds.meta, standardized=True))
        return out

    def inverse_x(self, x: np.ndarray) -> np.ndarray:
        return x * self.x_std + self.x_mean

    def inverse_s(self, s: np.ndarray) -> np.ndarray:
        return s * self.s_std + self.s_mean

    def inverse_y(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "s_mean": self.s_mean.tolist(), "s_std": self.s_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["x_mean"], float), np.asarray(d["x_std"], float),
                   np.asarray(d["s_mean"], float), np.asarray(d["s_std"], float),
                   float(d["y_mean"]), float(d["y_std"]))


def standardize(train: Dataset, *others: Dataset):
    """Fit on ``train`` only; returns ``(train_std, *others_std, scaler)``."""
    scaler = Scaler.fit(train)
    return (scaler.transform(train), *(scaler.transform(o) for o in others), scaler)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------
class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class CsvSchema:
    x_prefix: str = "x_"
    s_prefix: str = "s_"
    t_col: str = "t"
    y_col: str = "y"
    y0_col: str = "y0_true"
    y1_col: str = "y1_true"


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(ds: Dataset, path, schema: CsvSchema = CsvSchema()) -> None:
    header = [f"{schema.x_prefix}{j}" for j in range(ds.x_dim)] + [schema.t_col]
    header += [f"{schema.s_prefix}{j}" for j in range(ds.s_dim)] + [schema.y_col]
    if ds.has_potential_outcomes:
        header += [schema.y0_col, schema.y1_col]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [_fmt(v) for v in ds.x[i]] + [str(int(ds.t[i]))]
            row += [_fmt(v) for v in ds.s[i]] + [_fmt(ds.y[i])]
            if ds.has_potential_outcomes:
                row += [_fmt(ds.y0_true[i]), _fmt(ds.y1_true[i])]
            w.writerow(row)


def _indexed_cols(header: Sequence[str], prefix: str) -> list[int]:
    cols = []
    for j, name in enumerate(header):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            cols.append((int(name[len(prefix):]), j))
    return [j for _, j in sorted(cols)]


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    pos = {name: j for j, name in enumerate(header)}
    xcols = _indexed_cols(header, schema.x_prefix)
    scols = _indexed_cols(header, schema.s_prefix)
    if not xcols:
        raise CsvFormatError(f"{path}: missing required column {schema.x_prefix}0")
    for col in (schema.t_col, schema.y_col):
        if col not in pos:
            raise CsvFormatError(f"{path}: missing required column {col!r}")
    has_po = schema.y0_col in pos and schema.y1_col in pos
    n = len(body)
    x = np.empty((n, len(xcols)))
    s = np.empty((n, len(scols)))
    t = np.empty(n)
    y = np.empty(n)
    y0 = np.empty(n) if has_po else None
    y1 = np.empty(n) if has_po else None

    for i, row in enumerate(body):
        line = i + 2  # 1-based, after header
        if len(row) != len(header):
            raise CsvFormatError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")

        def num(j):
            try:
                return float(row[j])
            except ValueError:
                raise CsvFormatError(f"{path}: line {line}, column {header[j]!r}: "
                                     f"cannot parse {row[j]!r} as a number") from None

        x[i] = [num(j) for j in xcols]
        s[i] = [num(j) for j in scols]
        tv = num(pos[schema.t_col])
        if tv not in (0.0, 1.0):
            raise CsvFormatError(f"{path}: line {line}, column {schema.t_col!r}: "
                                 f"treatment must be 0 or 1, got {row[pos[schema.t_col]]!r}")
        t[i] = tv
        y[i] = num(pos[schema.y_col])
        if has_po:
            y0[i] = num(pos[schema.y0_col])
            y1[i] = num(pos[schema.y1_col])
    return Dataset(x, t, s, y, y0, y1, meta={"source": str(path)})


def dataclass_from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)
