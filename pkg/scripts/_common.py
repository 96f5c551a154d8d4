"""Shared argument handling for the experiment scripts."""

import argparse
import sys
from pathlib import Path

from pipcfr.eval import format_report
from pipcfr.sweep import read_results, sweep


def parser(description: str, seeds: int = 5, epochs: int = 60, out: str = "runs/experiment"):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--seeds", type=int, default=seeds, help="number of seeds, starting at 0")
    ap.add_argument("--epochs", type=int, default=epochs)
    ap.add_argument("--out", default=out)
    ap.add_argument("--workers", type=int, default=1)
    return ap


def run(grid: dict, base: dict, args, group_by, metrics=("pehe_in", "pehe_out", "cf_error_var")):
    out = Path(args.out)

    def progress(rec):
        tail = f"pehe_out={rec['metrics']['pehe_out']:.3f}" if rec["status"] == "ok" else rec["error"]
        print(f"[{rec['status']}] {rec['id']}  {tail}", file=sys.stderr, flush=True)

    records = sweep(grid, dict(base, **{"train.epochs": args.epochs}), out, args.workers, progress)
    rows = read_results(out / "results.csv")
    text = format_report(rows, group_by, metrics)
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text)
    return records
