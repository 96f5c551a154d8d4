"""Single-run pipeline and grid sweeps driven by flat ``key = value`` configs.

One root ``seed`` feeds named substreams: ``data`` for the generator,
``split`` for the train/val/test shuffle, and the trainer's own ``init``
and ``batching`` streams.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path
from typing import Callable, Optional

from . import datagen as dg
from .config import substream_seed
from .eval import MetricsReport, evaluate
from .ipm import IpmConfig
from .losses import diagnostics
from .nets import ArchConfig, Method
from .trainer import TrainConfig, train

DEFAULTS = {
    "seed": 0,
    "data.kind": "temporal",
    "data.n": 4000,
    "data.K": 20,
    "data.feat_dim": 5,
    "data.eps_u": 1.0,
    "data.eps_y": 0.1,
    "data.alpha_window": 0.25,
    "data.gamma_y": 0.99,
    "data.coef_seed": 0,
    "data.sigma_x": 1.0,
    "data.sigma_t": 1.0,
    "data.sigma_u": 2.0,
    "data.alpha1": 2.0,
    "data.alpha2": 1.0,
    "data.m": 4,
    "data.C1": 0.5,
    "data.C2": 1.0,
    "data.x_dim": 25,
    "data.laplace_scale": 1.0,
    "split.train_frac": 0.6,
    "split.val_frac": 0.2,
    "split.test_frac": 0.2,
    "train.method": "PIPCFR_WASS",
    "train.epochs": 300,
    "train.batch_size": 250,
    "train.lr": 0.001,
    "train.lr_decay": 0.95,
    "train.gamma": 1.0,
    "train.early_stop_patience": 30,
    "train.kl_sign": "as_written",
    "train.alternation": "batch",
    "train.strict_routing": True,
    "train.f_anchor": "level",
    "train.f_anchor_weight": 1.0,
    "ipm.rbf_bandwidth": "median-heuristic",
    "ipm.unbiased_mmd": False,
    "ipm.sinkhorn_epsilon": 0.1,
    "ipm.sinkhorn_epsilon_mode": "mean_cost",
    "ipm.sinkhorn_iters": 100,
    "ipm.sinkhorn_tol": 1e-4,
    "arch.rep_width": 64,
    "arch.rep_layers": 3,
    "arch.head_width": 64,
    "arch.head_layers": 4,
    "arch.phi_hidden": 128,
    "arch.phi_layers": 3,
    "arch.phi_dim": 32,
    "arch.prop_width": 64,
    "arch.prop_layers": 4,
    "arch.activation": "relu",
}

# defaults picked for this implementation rather than fixed by the method
CHOSEN = {
    "train.epochs", "train.early_stop_patience", "train.kl_sign", "train.alternation", "train.f_anchor",
    "train.f_anchor_weight", "arch.phi_dim", "arch.activation", "data.m", "data.C1", "data.eps_y",
    "ipm.rbf_bandwidth", "ipm.sinkhorn_epsilon", "ipm.sinkhorn_epsilon_mode", "ipm.sinkhorn_iters",
    "ipm.sinkhorn_tol",
}

# short grid names accepted by the sweep runner
ALIASES = {
    "gamma": "train.gamma", "method": "train.method", "kl_sign": "train.kl_sign",
    "epochs": "train.epochs", "eps_u": "data.eps_u", "noise": "data.eps_u", "K": "data.K",
    "sigma_u": "data.sigma_u", "n": "data.n", "kind": "data.kind",
}

KINDS = ("example1", "temporal", "sequential", "ar")


def resolve(*layers: dict) -> dict:
    """Defaults overlaid by each layer in turn; unknown keys are rejected."""
    out = dict(DEFAULTS)
    for layer in layers:
        for k, v in layer.items():
            key = ALIASES.get(k, k)
            if key not in DEFAULTS:
                raise KeyError(f"unknown config key {k!r}")
            out[key] = _coerce(key, v)
    return out


def _coerce(key: str, v):
    ref = DEFAULTS[key]
    if v is None or isinstance(ref, str):
        return v if ref != "median-heuristic" or isinstance(v, str) else float(v)
    if isinstance(ref, bool):
        if isinstance(v, str):
            return v.lower() in ("1", "true", "yes")
        return bool(v)
    if isinstance(ref, int):
        return int(v)
    if isinstance(ref, float):
        return float(v)
    return v


def _pick(cls, flat: dict, prefix: str, **extra):
    names = {f.name for f in fields(cls)}
    kw = {k[len(prefix) + 1:]: v for k, v in flat.items() if k.startswith(prefix + ".")}
    kw = {k: v for k, v in kw.items() if k in names}
    kw.update(extra)
    return cls(**kw)


def data_config(flat: dict):
    kind = flat["data.kind"]
    seed = substream_seed(flat["seed"], "data")
    n = flat["data.n"]
    if kind == "example1":
        return _pick(dg.Example1Config, flat, "data", n=n, seed=seed)
    if kind == "temporal":
        return _pick(dg.TemporalConfig, flat, "data", n_samples=n, seed=seed)
    if kind == "sequential":
        return _pick(dg.SequentialConfig, flat, "data", n_units=n, seed=seed)
    if kind == "ar":
        return _pick(dg.ARConfig, flat, "data", n_units=n, seed=seed)
    raise ValueError(f"unknown data.kind {kind!r}; expected one of {KINDS}")


def generate(flat: dict) -> dg.Dataset:
    cfg = data_config(flat)
    return {
        dg.Example1Config: dg.gen_example1,
        dg.TemporalConfig: dg.gen_temporal,
        dg.SequentialConfig: dg.gen_sequential,
        dg.ARConfig: dg.gen_ar,
    }[type(cfg)](cfg)


def split_spec(flat: dict) -> dg.SplitSpec:
    return dg.SplitSpec(flat["split.train_frac"], flat["split.val_frac"], flat["split.test_frac"],
                        substream_seed(flat["seed"], "split"))


def train_config(flat: dict, checkpoint_path: Optional[str] = None) -> TrainConfig:
    method = Method(flat["train.method"])
    ipm_kw = {k[4:]: v for k, v in flat.items() if k.startswith("ipm.")}
    ipm = IpmConfig(kind=method.ipm_kind or "MMD", **ipm_kw)
    arch = _pick(ArchConfig, flat, "arch")
    return _pick(TrainConfig, flat, "train", method=method, ipm=ipm, arch=arch, seed=flat["seed"],
                 checkpoint_path=checkpoint_path)


def fingerprint(flat: dict) -> str:
    return dg.config_hash(flat)


def run_pipeline(flat: dict, out_dir: Optional[Path] = None, with_diagnostics: bool = False) -> dict:
    """generate -> split -> standardize -> train -> evaluate for one resolved config."""
    ds = generate(flat)
    tr, va, te = dg.split(ds, split_spec(flat))
    tr_s, va_s, te_s, scaler = dg.standardize(tr, va, te)
    ckpt = str(out_dir / "checkpoint.json") if out_dir is not None else None
    bundle, trace = train(tr_s, va_s, train_config(flat, ckpt), scaler=scaler)
    report = evaluate(bundle, tr, te, seed=flat["seed"], fingerprint=fingerprint(flat))
    rec = {"metrics": report.to_dict(), "best_epoch": trace.best_epoch, "epochs_run": len(trace.records),
           "ipm_skipped": trace.ipm_skipped}
    if with_diagnostics and bundle.method.is_pipcfr:
        rec["diagnostics"] = diagnostics(bundle, te_s).record()
    if out_dir is not None:
        trace.to_csv(out_dir / "trace.csv")
    return rec


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------
def expand_grid(grid: dict) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cell_id(cell: dict) -> str:
    return "__".join(f"{k}={cell[k]}" for k in sorted(cell)).replace("/", "_")


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _run_cell(args) -> dict:
    base, cell, records_dir = args
    cid = cell_id(cell)
    rec = {"cell": cell, "id": cid}
    try:
        flat = resolve(base, cell)
        rec["config"] = flat
        rec.update(run_pipeline(flat))
        rec["status"] = "ok"
    except Exception as exc:  # one bad cell must not stop the sweep
        rec["status"] = "failed"
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["traceback"] = traceback.format_exc(limit=5)
    _write_atomic(Path(records_dir) / f"{cid}.json", json.dumps(rec, sort_keys=True, indent=1, default=str))
    return rec


METRIC_COLUMNS = ("pehe_in", "pehe_out", "cf_error_mean", "cf_error_var")


def sweep(grid: dict, base: dict, out_dir, workers: int = 1,
          progress: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Run every grid cell; finished cells found on disk are reused (resume-safe)."""
    out_dir = Path(out_dir)
    records_dir = out_dir / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    cells = expand_grid(grid)
    done, todo = {}, []
    for cell in cells:
        p = records_dir / f"{cell_id(cell)}.json"
        if p.exists():
            rec = json.loads(p.read_text(encoding="utf-8"))
            if rec.get("status") == "ok":
                done[rec["id"]] = rec
                continue
        todo.append(cell)
    jobs = [(base, cell, str(records_dir)) for cell in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_run_cell, jobs):
                done[rec["id"]] = rec
                if progress:
                    progress(rec)
    else:
        for job in jobs:
            rec = _run_cell(job)
            done[rec["id"]] = rec
            if progress:
                progress(rec)
    records = [done[cell_id(c)] for c in cells]
    write_results_csv(records, list(grid), out_dir / "results.csv")
    return records


def write_results_csv(records: list[dict], keys: list[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(keys) + ["method_name", "status"] + list(METRIC_COLUMNS))
        for rec in records:
            m = rec.get("metrics", {})
            w.writerow([rec["cell"].get(k) for k in keys] + [m.get("method", ""), rec.get("status")]
                       + [repr(m[c]) if c in m else "" for c in METRIC_COLUMNS])


def read_results(path) -> list[dict]:
    """Rows of a results CSV (or every JSON record in a sweep directory)."""
    p = Path(path)
    if p.is_dir():
        rows = []
        for f in sorted((p / "records" if (p / "records").is_dir() else p).glob("*.json")):
            rec = json.loads(f.read_text(encoding="utf-8"))
            if rec.get("status") != "ok":
                continue
            rows.append(dict(rec["cell"], **{k: rec["metrics"][k] for k in METRIC_COLUMNS},
                             method_name=rec["metrics"]["method"]))
        return rows
    with open(p, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r.get("status", "ok") == "ok"]
    for r in rows:
        for k in METRIC_COLUMNS:
            r[k] = float(r[k]) if r.get(k) not in (None, "") else math.nan
    return rows


def metrics_from_record(rec: dict) -> MetricsReport:
    return MetricsReport.from_dict(rec["metrics"])


def describe_defaults() -> str:
    lines = []
    for k in sorted(DEFAULTS):
        note = "    # implementation choice" if k in CHOSEN else ""
        lines.append(f"{k} = {DEFAULTS[k]!s}{note}")
    return "\n".join(lines) + "\n"
