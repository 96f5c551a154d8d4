"""Command-line front end: generate, train, eval, sweep, oracle, report.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 numerical abort.
Failures print one JSON line on stderr: {"error": ..., "message": ..., "exit": ...}.
``PIPCFR_OUTPUT_ROOT`` sets where runs land when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import datagen as dg
from .config import ConfigError, dump_config, load_config, parse_value
from .eval import evaluate, example1_oracle, format_report, oracle_to_dict
from .losses import diagnostics
from .nets import load_bundle
from .sweep import (
    ALIASES,
    DEFAULTS,
    fingerprint,
    generate,
    read_results,
    resolve,
    split_spec,
    sweep,
    train_config,
)
from .trainer import NumericalAbort, train

ENV_OUTPUT_ROOT = "PIPCFR_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flags that map straight onto config keys
FLAG_KEYS = {
    "kind": "data.kind", "n": "data.n", "K": "data.K", "feat_dim": "data.feat_dim",
    "eps_u": "data.eps_u", "sigma_u": "data.sigma_u", "method": "train.method",
    "epochs": "train.epochs", "batch_size": "train.batch_size", "lr": "train.lr",
    "gamma": "train.gamma", "kl_sign": "train.kl_sign", "patience": "train.early_stop_patience",
    "seed": "seed",
}


def _add_common(p: argparse.ArgumentParser, flags: tuple) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--out", help="output directory")
    for f in flags:
        p.add_argument(f"--{f.replace('_', '-')}", dest=f, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pipcfr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write train/val/test CSVs and metadata")
    _add_common(g, ("kind", "n", "K", "feat_dim", "eps_u", "sigma_u", "seed"))

    t = sub.add_parser("train", help="train on a generated dataset directory")
    _add_common(t, ("method", "epochs", "batch_size", "lr", "gamma", "kl_sign", "patience", "seed"))
    t.add_argument("--data", required=True, help="directory with train.csv and val.csv")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="directory with train.csv and test.csv")
    e.add_argument("--out")

    s = sub.add_parser("sweep", help="run a grid of full pipelines")
    _add_common(s, ("kind", "n", "K", "eps_u", "sigma_u", "method", "epochs", "gamma", "kl_sign", "seed"))
    s.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis (repeatable); short keys: " + ", ".join(sorted(ALIASES)))
    s.add_argument("--workers", type=int, default=1)

    o = sub.add_parser("oracle", help="closed-form OLS study on the example1 SEM")
    o.add_argument("--sigma-u", type=float, action="append", dest="sigma_u")
    o.add_argument("--n-mc", type=int, default=10**6, dest="n_mc")
    o.add_argument("--alpha1", type=float, default=2.0)
    o.add_argument("--alpha2", type=float, default=1.0)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out")

    r = sub.add_parser("report", help="aggregate sweep results into mean ± std tables")
    r.add_argument("results", help="results.csv or a sweep directory")
    r.add_argument("--group-by", default=None, help="comma-separated columns (default: all but seed)")
    r.add_argument("--out")
    return ap


# ---------------------------------------------------------------------------
def _overrides(args) -> dict:
    layers = {}
    if getattr(args, "config", None):
        layers.update(load_config(args.config))
    for f, key in FLAG_KEYS.items():
        v = getattr(args, f, None)
        if v is not None:
            layers[key] = parse_value(v)
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        layers[k.strip()] = parse_value(v)
    try:
        return resolve(layers)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _out_dir(args, command: str, flat: Optional[dict] = None) -> Path:
    if getattr(args, "out", None):
        p = Path(args.out)
    else:
        root = Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))
        tag = fingerprint(flat)[:10] if flat else "latest"
        p = root / f"{command}-{tag}"
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {p}: {exc.strerror}") from None
    if not os.access(p, os.W_OK):
        raise RuntimeError(f"output directory {p} is not writable")
    return p


def _snapshot(out: Path, flat: dict) -> None:
    (out / "resolved_config.txt").write_text(dump_config(flat), encoding="utf-8")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def cmd_generate(args) -> dict:
    flat = _overrides(args)
    out = _out_dir(args, "generate", flat)
    ds = generate(flat)
    parts = dg.split(ds, split_spec(flat))
    for name, part in zip(("train", "val", "test"), parts):
        dg.write_csv(part, out / f"{name}.csv")
    tau = ds.tau_true
    meta = {
        "seed": flat["seed"],
        "kind": flat["data.kind"],
        "config_hash": fingerprint(flat),
        "generator_hash": ds.meta.get("config_hash"),
        "rows": {n: len(p) for n, p in zip(("train", "val", "test"), parts)},
        "x_dim": ds.x_dim,
        "s_dim": ds.s_dim,
        "treated_fraction": float(ds.t.mean()),
        "tau": None if tau is None else {"mean": float(tau.mean()), "std": float(tau.std()),
                                         "min": float(tau.min()), "max": float(tau.max())},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    _write_json(out / "meta.json", meta)
    _snapshot(out, flat)
    return {"out": str(out), "rows": meta["rows"]}


def _load_split(data_dir, name) -> dg.Dataset:
    p = Path(data_dir) / f"{name}.csv"
    if not p.exists():
        raise FileNotFoundError(f"missing {p}")
    return dg.load_csv(p)


def cmd_train(args) -> dict:
    flat = _overrides(args)
    out = _out_dir(args, "train", flat)
    tr, va = _load_split(args.data, "train"), _load_split(args.data, "val")
    tr_s, va_s, scaler = dg.standardize(tr, va)
    cfg = train_config(flat, str(out / "checkpoint.json"))
    bundle, trace = train(tr_s, va_s, cfg, scaler=scaler)
    trace.to_csv(out / "trace.csv")
    _snapshot(out, flat)
    return {"out": str(out), "best_epoch": trace.best_epoch, "best_val_mse": trace.best_val_mse}


def cmd_eval(args) -> dict:
    bundle = load_bundle(args.checkpoint)
    tr, te = _load_split(args.data, "train"), _load_split(args.data, "test")
    out = _out_dir(args, "eval")
    report = evaluate(bundle, tr, te)
    _write_json(out / "metrics.json", report.to_dict())
    result = {"out": str(out), "pehe_in": report.pehe_in, "pehe_out": report.pehe_out}
    if bundle.method.is_pipcfr and te.has_potential_outcomes and bundle.scaler is not None:
        diag = diagnostics(bundle, bundle.scaler.transform(te)).record()
        _write_json(out / "diagnostics.json", {k: (None if not np.isfinite(v) else v) for k, v in diag.items()})
    return result


def _parse_grid(items) -> dict:
    grid = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--grid expects KEY=V1,V2,..., got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if ALIASES.get(k, k) not in DEFAULTS:
            raise UsageError(f"unknown grid key {k!r}")
        vals = parse_value(v)
        grid[k] = vals if isinstance(vals, list) else [vals]
    return grid


def cmd_sweep(args) -> dict:
    flat = _overrides(args)
    grid = _parse_grid(args.grid)
    if not grid:
        grid = {"seed": [flat["seed"]]}
    out = _out_dir(args, "sweep", dict(flat, grid=json.dumps(grid, sort_keys=True)))
    _snapshot(out, flat)
    _write_json(out / "grid.json", grid)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")

    def progress(rec):
        line = {"cell": rec["id"], "status": rec["status"]}
        if rec["status"] == "ok":
            line["pehe_out"] = rec["metrics"]["pehe_out"]
        else:
            line["error"] = rec["error"]
        print(json.dumps(line), flush=True)

    # the base layer carries every resolved value so cells only override grid keys
    records = sweep(grid, {k: v for k, v in flat.items()}, out, workers=args.workers, progress=progress)
    failed = sum(r["status"] != "ok" for r in records)
    return {"out": str(out), "cells": len(records), "failed": failed}


def cmd_oracle(args) -> dict:
    out = _out_dir(args, "oracle")
    sigmas = args.sigma_u or [1.0, 2.0, 3.0]
    results = {}
    for su in sigmas:
        cfg = dg.Example1Config(sigma_u=su, alpha1=args.alpha1, alpha2=args.alpha2, seed=args.seed)
        results[repr(su)] = oracle_to_dict(example1_oracle(cfg, n_mc=args.n_mc))
    _write_json(out / "oracle.json", {"n_mc": args.n_mc, "seed": args.seed, "sigma_u": results})
    return {"out": str(out), "sigma_u": sigmas}


def cmd_report(args) -> dict:
    rows = read_results(args.results)
    if not rows:
        raise RuntimeError(f"no successful results in {args.results}")
    if args.group_by:
        keys = [k.strip() for k in args.group_by.split(",")]
    else:
        skip = {"seed", "status", "pehe_in", "pehe_out", "cf_error_mean", "cf_error_var"}
        keys = [k for k in rows[0] if k not in skip]
    text = format_report(rows, keys)
    sys.stdout.write(text)
    if args.out:
        out = _out_dir(args, "report")
        (out / "report.txt").write_text(text, encoding="utf-8")
    return {}


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "oracle": cmd_oracle, "report": cmd_report}


def _fail(kind: str, message: str, code: int) -> int:
    msg = " ".join(str(message).split())
    sys.stderr.write(json.dumps({"error": kind, "message": msg, "exit": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        result = COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except NumericalAbort as exc:
        return _fail("numerical", f"{exc} {json.dumps(exc.snapshot)[:500]}", EXIT_NUMERIC)
    except Exception as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    if result and args.command != "report":
        print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
