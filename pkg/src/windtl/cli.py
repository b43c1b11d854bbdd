"""Command-line interface: generate farm pools, run lifecycle scenarios,
summarize reports.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .lifecycle import run_lifecycle
from .scenario import ScenarioConfig, default_scenario, load_scenario
from .synthdata import (
    DEFAULT_START,
    attach_power,
    generate_farm_config,
    generate_power_series,
    generate_truth_series,
    perturb_for_model,
    save_dataset_csv,
)
from .types import HOURS_PER_MONTH, Terrain, ValidationError


def _parse_pool(spec: str) -> list[tuple[Terrain, int]]:
    pool = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            terrain, count = chunk.split(":")
            pool.append((Terrain(terrain.strip()), int(count)))
        except (ValueError, KeyError):
            raise ValidationError(f"bad pool entry {chunk!r}; expected terrain:count") from None
    if not pool:
        raise ValidationError("--pool must name at least one terrain:count pair")
    return pool


def cmd_gen(args) -> int:
    """Write one labeled CSV per (farm, weather model) plus a manifest."""
    pool = _parse_pool(args.pool)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_steps = args.months * HOURS_PER_MONTH
    nwp_models = [m.strip() for m in args.nwp_models.split(",") if m.strip()]

    manifest = {"seed": args.seed, "months": args.months, "nwp_models": nwp_models, "farms": [], "files": []}
    idx = 0
    for terrain, count in pool:
        for i in range(count):
            cfg = generate_farm_config(args.seed * 10007 + idx, terrain)
            idx += 1
            truth = generate_truth_series(cfg, n_steps, seed=args.seed, start=DEFAULT_START)
            labeled_truth = generate_power_series(cfg, truth, [], seed=args.seed)
            manifest["farms"].append(cfg.to_json_dict())
            for model_id in nwp_models:
                view = attach_power(perturb_for_model(truth, model_id, args.seed), labeled_truth)
                name = f"{cfg.farm_id}__{model_id}.csv"
                save_dataset_csv(view, out / name)
                manifest["files"].append(name)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"wrote {len(manifest['files'])} series for {len(manifest['farms'])} farms to {out}")
    return 0


def _write_metrics_csv(report, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "method", "rmse", "mae", "skill"])
        for month, method, v_rmse, v_mae, v_skill in report.metrics_rows():
            writer.writerow([month, method, repr(v_rmse), repr(v_mae), repr(v_skill)])


def cmd_run(args) -> int:
    """Execute a lifecycle scenario and write report JSON + metrics CSV."""
    if args.scenario:
        scenario = load_scenario(args.scenario)
    else:
        scenario = default_scenario()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.months is not None:
        overrides["months"] = args.months
    if args.methods:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if overrides:
        from dataclasses import replace

        scenario = replace(scenario, **overrides)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_lifecycle(scenario)
    (out / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    _write_metrics_csv(report, out / "metrics.csv")
    n_viol = sum(1 for e in report.audit if not e["ok"])
    print(f"simulated {scenario.months} months; audit violations: {n_viol}; wrote {out}/report.json")
    return 0


def _aggregate(report_dict: dict) -> list[dict]:
    per_method: dict[str, dict[str, list[float]]] = {}
    for rec in report_dict["months"]:
        for method, m in rec["metrics"].items():
            agg = per_method.setdefault(method, {"rmse": [], "skill": []})
            agg["rmse"].append(m["rmse"])
            agg["skill"].append(m["skill"])
    rows = []
    for method in sorted(per_method):
        r = np.array(per_method[method]["rmse"])
        s = np.array(per_method[method]["skill"])
        rows.append(
            {
                "method": method,
                "months": len(r),
                "rmse_median": float(np.median(r)),
                "rmse_iqr": float(np.percentile(r, 75) - np.percentile(r, 25)),
                "skill_median": float(np.median(s)),
                "skill_iqr": float(np.percentile(s, 75) - np.percentile(s, 25)),
            }
        )
    return rows


def cmd_eval(args) -> int:
    """Print per-method median/IQR of monthly RMSE and skill."""
    path = Path(args.report)
    if not path.exists():
        print(f"report not found: {path}", file=sys.stderr)
        return 2
    rows = _aggregate(json.loads(path.read_text()))
    if args.format == "json":
        print(json.dumps(rows, indent=2, sort_keys=True))
    elif args.format == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerow(["method", "months", "rmse_median", "rmse_iqr", "skill_median", "skill_iqr"])
        for r in rows:
            writer.writerow(
                [r["method"], r["months"], repr(r["rmse_median"]), repr(r["rmse_iqr"]), repr(r["skill_median"]), repr(r["skill_iqr"])]
            )
    else:
        header = f"{'method':<14} {'months':>6} {'rmse_med':>10} {'rmse_iqr':>10} {'skill_med':>10} {'skill_iqr':>10}"
        print(header)
        print("-" * len(header))
        for r in rows:
            print(
                f"{r['method']:<14} {r['months']:>6d} {r['rmse_median']:>10.4f} {r['rmse_iqr']:>10.4f} "
                f"{r['skill_median']:>10.4f} {r['skill_iqr']:>10.4f}"
            )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="windtl", description="Lifecycle wind-power transfer-learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic farm pool on disk")
    p_gen.add_argument("--pool", required=True, help="terrain:count list, e.g. offshore:3,forest:2")
    p_gen.add_argument("--months", type=int, default=12)
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--nwp-models", default="nwpA", dest="nwp_models")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run a lifecycle scenario")
    p_run.add_argument("--scenario", help="scenario JSON (bundled default when omitted)")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--months", type=int)
    p_run.add_argument("--methods", help="comma-separated subset of methods")
    p_run.add_argument("--out", required=True)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="summarize a report")
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--format", choices=("table", "json", "csv"), default="table")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - uniform runtime exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
