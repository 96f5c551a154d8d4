"""Alternating minibatch training for the pseudo-outcome model and baselines.

Per minibatch the pseudo-outcome model runs four Adam steps, in order:

1. g, g_tilde     on loss_p
2. psi_eta        on loss_kl + loss_y
3. psi_alpha, h   on loss_y
4. f              on loss_pip

Baselines train f alone: TARNET on plain factual MSE, CFRNET_* on the
balanced MSE plus an IPM penalty over f's trunk.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from . import numgrad as ng
from .config import substream
from .datagen import Dataset, Scaler
from .ipm import IpmConfig
from .losses import (
    Batch,
    LossCounters,
    factual_mse,
    level_anchor,
    loss_cfr,
    loss_kl,
    loss_p,
    loss_pip,
    loss_tarnet,
    loss_y,
)
from .nets import ArchConfig, Method, ModelBundle, save_bundle


class NumericalAbort(RuntimeError):
    """A loss turned NaN/inf; ``snapshot`` describes the offending batch."""

    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


class RoutingError(AssertionError):
    pass


@dataclass
class TrainConfig:
    method: Method = Method.PIPCFR_WASS
    epochs: int = 300
    batch_size: int = 250
    lr: float = 1e-3
    lr_decay: float = 0.95
    gamma: float = 1.0
    ipm: Optional[IpmConfig] = None  # None: kind follows the method
    seed: int = 0
    early_stop_patience: int = 30    # 0 disables early stopping
    kl_sign: Literal["as_written", "flipped"] = "as_written"
    checkpoint_path: Optional[str] = None
    arch: ArchConfig = field(default_factory=ArchConfig)
    alternation: Literal["batch", "epoch"] = "batch"
    strict_routing: bool = True
    debug_routing_every: int = 0     # >0: verify parameter isolation every N batches
    # extra term on f's step: "level" fits only (f_0 + f_1)/2 to the factual
    # outcome, "factual" adds plain factual MSE, "none" uses loss_pip alone
    f_anchor: Literal["level", "factual", "none"] = "level"
    f_anchor_weight: float = 1.0

    def __post_init__(self):
        self.method = Method(self.method)
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.early_stop_patience < 0:
            raise ValueError("early_stop_patience must be non-negative")
        if self.kl_sign not in ("as_written", "flipped"):
            raise ValueError(f"unknown kl_sign {self.kl_sign!r}")
        if self.alternation not in ("batch", "epoch"):
            raise ValueError(f"unknown alternation {self.alternation!r}")
        if self.f_anchor not in ("level", "factual", "none"):
            raise ValueError(f"unknown f_anchor {self.f_anchor!r}")
        if self.f_anchor_weight < 0:
            raise ValueError("f_anchor_weight must be non-negative")

    @property
    def ipm_config(self) -> Optional[IpmConfig]:
        kind = self.method.ipm_kind
        if kind is None:
            return None
        if self.ipm is None:
            return IpmConfig(kind=kind)
        return replace(self.ipm, kind=kind)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    L_p: float
    L_KL: float
    L_y: float
    L_pip: float
    val_mse: float
    wall_clock: float = field(default=0.0, compare=False)


@dataclass
class TrainTrace:
    records: list[EpochRecord] = field(default_factory=list)
    ipm_skipped: int = 0
    unit_weight_batches: int = 0
    best_epoch: int = -1
    best_val_mse: float = math.inf
    stopped_early: bool = False

    COLUMNS = [f.name for f in fields(EpochRecord)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])

    @classmethod
    def from_csv(cls, path) -> "TrainTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        recs = [EpochRecord(int(r["epoch"]), *(float(r[c]) for c in cls.COLUMNS[1:])) for r in rows]
        return cls(records=recs)


def _finite(name: str, value: ng.Tensor, batch_idx: np.ndarray, epoch: int, step: int) -> float:
    v = float(value.data)
    if not math.isfinite(v):
        raise NumericalAbort(
            f"{name} is {v} at epoch {epoch}, batch {step}",
            {"loss": name, "value": v, "epoch": epoch, "batch": step, "indices": batch_idx.tolist()},
        )
    return v


def _snapshot(params: list[ng.Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def _check_unchanged(before: list[np.ndarray], params: list[ng.Tensor], step_name: str) -> None:
    for a, p in zip(before, params):
        if not np.array_equal(a, p.data):
            raise RoutingError(f"{step_name} modified a parameter outside its update set")


class Trainer:
    """Holds the bundle, one Adam per parameter group, and RNG streams."""

    def __init__(self, cfg: TrainConfig, x_dim: int, s_dim: int, scaler: Optional[Scaler] = None):
        self.cfg = cfg
        self.bundle = ModelBundle.build(cfg.method, x_dim, s_dim, cfg.arch, substream(cfg.seed, "init"), scaler)
        self.batch_rng = substream(cfg.seed, "batching")
        self.ipm_cfg = cfg.ipm_config
        self.counters = LossCounters()
        b = self.bundle
        mk = lambda ps: ng.Adam(ps, lr=cfg.lr, decay_rate=cfg.lr_decay)  # noqa: E731
        self.opt = {"f": mk(b.group("f"))}
        if cfg.method.is_pipcfr:
            self.opt.update(g=mk(b.group("g")), psi_eta=mk(b.group("psi_eta")), q=mk(b.group("q")))
        self.n_batches_seen = 0

    # -- single steps ------------------------------------------------------
    def _apply(self, group: str, loss: ng.Tensor) -> None:
        self.bundle.zero_grad()
        ng.backward(loss)
        debug = self.cfg.debug_routing_every and self.n_batches_seen % self.cfg.debug_routing_every == 0
        if debug:
            own = {id(p) for p in self.opt[group].params}
            others = [p for p in self.bundle.all_params() if id(p) not in own]
            if self.cfg.strict_routing:
                for p in others:
                    if p.grad is not None and np.any(p.grad != 0):
                        raise RoutingError(f"step on {group!r} produced gradient outside its group")
            before = _snapshot(others)
        self.opt[group].step()
        if debug:
            _check_unchanged(before, others, f"step on {group!r}")

    def step_p(self, batch: Batch) -> float:
        loss = loss_p(self.bundle, batch, strict=self.cfg.strict_routing)
        v = _finite("L_p", loss, self._idx, self._epoch, self._step)
        self._apply("g", loss)
        return v

    def step_psi_eta(self, batch: Batch) -> float:
        strict = self.cfg.strict_routing
        lkl = loss_kl(self.bundle, batch, self.cfg.gamma, self.cfg.kl_sign, strict=strict)
        ly = loss_y(self.bundle, batch, self.ipm_cfg, train="psi_eta" if strict else "all")
        v = _finite("L_KL", lkl, self._idx, self._epoch, self._step)
        _finite("L_y", ly, self._idx, self._epoch, self._step)
        self._apply("psi_eta", lkl + ly)
        return v

    def step_q(self, batch: Batch) -> float:
        train = "q" if self.cfg.strict_routing else "all"
        loss = loss_y(self.bundle, batch, self.ipm_cfg, train=train, counters=self.counters)
        v = _finite("L_y", loss, self._idx, self._epoch, self._step)
        self._apply("q", loss)
        return v

    def step_f(self, batch: Batch) -> float:
        m = self.cfg.method
        if m is Method.TARNET:
            loss = loss_tarnet(self.bundle, batch)
            name = "L_f"
        elif not m.is_pipcfr:
            loss = loss_cfr(self.bundle, batch, self.ipm_cfg, self.counters)
            name = "L_f"
        else:
            loss = loss_pip(self.bundle, batch, strict=self.cfg.strict_routing)
            name = "L_pip"
        v = _finite(name, loss, self._idx, self._epoch, self._step)
        if m.is_pipcfr and self.cfg.f_anchor != "none" and self.cfg.f_anchor_weight > 0:
            anchor = level_anchor if self.cfg.f_anchor == "level" else factual_mse
            loss = loss + self.cfg.f_anchor_weight * anchor(self.bundle, batch)
        self._apply("f", loss)
        return v

    # -- epochs ------------------------------------------------------------
    def _batches(self, n: int) -> list[np.ndarray]:
        perm = self.batch_rng.permutation(n)
        k = max(1, math.ceil(n / self.cfg.batch_size))
        return np.array_split(perm, k)

    def run_epoch(self, ds: Dataset, epoch: int) -> dict:
        for opt in self.opt.values():
            opt.set_epoch(epoch)
        self._epoch = epoch
        pip = self.cfg.method.is_pipcfr
        sums = {"L_p": [], "L_KL": [], "L_y": [], "L_pip": []}
        batches = self._batches(len(ds))
        steps = [self.step_p, self.step_psi_eta, self.step_q, self.step_f] if pip else [self.step_f]
        keys = ["L_p", "L_KL", "L_y", "L_pip"] if pip else ["L_pip"]
        if self.cfg.alternation == "batch":
            schedule = [(i, idx, list(zip(keys, steps))) for i, idx in enumerate(batches)]
        else:
            schedule = [(i, idx, [(k, st)]) for k, st in zip(keys, steps) for i, idx in enumerate(batches)]
        for i, idx, todo in schedule:
            self._idx, self._step = idx, i
            batch = Batch.from_dataset(ds, idx)
            for key, st in todo:
                sums[key].append(st(batch))
            self.n_batches_seen += 1
        return {k: (float(np.mean(v)) if v else math.nan) for k, v in sums.items()}

    def val_mse(self, ds: Dataset) -> float:
        with ng.no_grad():
            return float(factual_mse(self.bundle, Batch.from_dataset(ds)).data)

    def fit(self, train_ds: Dataset, val_ds: Optional[Dataset] = None) -> TrainTrace:
        cfg = self.cfg
        if cfg.method.is_pipcfr and train_ds.s_dim < 1:
            raise ValueError(f"{cfg.method.value} needs post-treatment variables")
        if cfg.batch_size > len(train_ds):
            raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {len(train_ds)}")
        val_ds = val_ds if val_ds is not None else train_ds
        trace = TrainTrace()
        best = None
        bad_epochs = 0
        t0 = time.perf_counter()
        for epoch in range(cfg.epochs):
            losses = self.run_epoch(train_ds, epoch)
            vm = self.val_mse(val_ds)
            if not math.isfinite(vm):
                raise NumericalAbort(f"validation MSE is {vm} at epoch {epoch}", {"epoch": epoch})
            trace.records.append(EpochRecord(epoch, cfg.lr_at(epoch), losses["L_p"], losses["L_KL"],
                                             losses["L_y"], losses["L_pip"], vm,
                                             time.perf_counter() - t0))
            if vm < trace.best_val_mse:
                trace.best_val_mse, trace.best_epoch = vm, epoch
                best = self.bundle.snapshot()
                bad_epochs = 0
            else:
                bad_epochs += 1
                if cfg.early_stop_patience and bad_epochs >= cfg.early_stop_patience:
                    trace.stopped_early = True
                    break
        if best is not None:
            self.bundle.restore(best)
        trace.ipm_skipped = self.counters.ipm_skipped
        trace.unit_weight_batches = self.counters.unit_weights
        if cfg.checkpoint_path:
            save_bundle(self.bundle, cfg.checkpoint_path, {"best_epoch": trace.best_epoch})
        return trace


def train(train_ds: Dataset, val_ds: Optional[Dataset], cfg: TrainConfig,
          scaler: Optional[Scaler] = None) -> tuple[ModelBundle, TrainTrace]:
    """Train on standardized data; returns the best-validation bundle and its trace."""
    trainer = Trainer(cfg, train_ds.x_dim, train_ds.s_dim, scaler)
    trace = trainer.fit(train_ds, val_ds)
    return trainer.bundle, trace


def save_trace(trace: TrainTrace, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(path)
