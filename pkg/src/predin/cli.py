"""Command-line entry point.

  predin run --config cfg.json [--variant predin] [--seeds 1,2,3] [--out DIR]
  predin ablation --config cfg.json [--seeds ...] [--out DIR]
  predin check-gradients [--seeds 5] [--coords 200]

Failures exit nonzero and print a machine-readable error JSON to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from .gradcheck import run_gradient_suite
from .harness import load_config, run_ablation, run_experiment


def _apply_overrides(config, args):
    updates = {}
    if getattr(args, "variant", None):
        updates["variant"] = args.variant
    if getattr(args, "seeds", None):
        updates["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "out", None):
        updates["output_dir"] = args.out
    return replace(config, **updates) if updates else config


def _cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    record = run_experiment(config)
    agg = record.aggregate
    for row in record.per_seed:
        if "error" in row:
            print(f"seed {row['seed']}: FAILED ({row['error']})")
        else:
            print(
                f"seed {row['seed']}: auc={row['auc']:.4f} acc={row['acc']:.4f} "
                f"oscr={row['oscr']:.4f} incon={row['incon']}"
            )
    if agg.get("n_seeds"):
        print(
            f"mean over {agg['n_seeds']} seeds: auc={agg['auc_mean']:.4f} "
            f"acc={agg['acc_mean']:.4f} oscr={agg['oscr_mean']:.4f}"
        )
    print(f"report written to {config.output_dir}/report.json")
    return 0


def _cmd_ablation(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    records = run_ablation(config)
    print("variant            auc     oscr    acc     incon")
    for variant, rec in records.items():
        agg = rec.aggregate
        if not agg.get("n_seeds"):
            print(f"{variant:<18} (all seeds failed)")
            continue
        incon = f"{agg['incon_mean']:.3f}" if agg["incon_mean"] is not None else "-"
        print(
            f"{variant:<18} {agg['auc_mean']:.4f}  {agg['oscr_mean']:.4f}  "
            f"{agg['acc_mean']:.4f}  {incon}"
        )
    print(f"table written to {config.output_dir}/ablation_table.csv")
    return 0


def _cmd_check_gradients(args) -> int:
    results = run_gradient_suite(n_seeds=args.seeds, n_coords=args.coords)
    worst = 0.0
    ok = True
    for name, report in results:
        status = "ok" if report.max_rel_error < 1e-4 else "FAIL"
        if report.max_rel_error >= 1e-4:
            ok = False
        worst = max(worst, report.max_rel_error)
        print(
            f"{name:<16} max_rel_error={report.max_rel_error:.3e} "
            f"checked={report.n_checked} kink_skipped={report.n_kink_skipped} [{status}]"
        )
    print(f"worst relative error: {worst:.3e}")
    if not ok:
        raise RuntimeError(f"gradient check failed (worst relative error {worst:.3e})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predin")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment variant across seeds")
    p_run.add_argument("--config", required=True, help="path to the JSON config")
    p_run.add_argument("--variant", help="override the configured model variant")
    p_run.add_argument("--seeds", help="comma-separated seed list override")
    p_run.add_argument("--out", help="override the output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_abl = sub.add_parser("ablation", help="run all ablation variants and tabulate")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--seeds")
    p_abl.add_argument("--out")
    p_abl.set_defaults(fn=_cmd_ablation)

    p_grad = sub.add_parser("check-gradients", help="finite-difference gradient suite")
    p_grad.add_argument("--seeds", type=int, default=5, help="number of random instances")
    p_grad.add_argument("--coords", type=int, default=420, help="coordinates per check")
    p_grad.set_defaults(fn=_cmd_check_gradients)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # surface every failure as machine-readable JSON
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
