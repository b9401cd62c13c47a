"""Command-line entry point.

Subcommands:

* ``generate`` — scenario config file -> dataset file
* ``train`` — training config + dataset -> checkpoint (+ loss log, labeling diagnostics)
* ``eval`` — checkpoint + dataset -> evaluation report file
* ``ablate`` — training config + dataset + seed list -> ablation table file
* ``gradcheck`` — run every finite-difference oracle; exit 1 on any failure

Exit codes: 0 success, 1 failure (including failed gradcheck), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from .data import generate_scenario, load_dataset, save_dataset, scenario_from_config
from .engine import (
    TrainConfig,
    fit,
    load_checkpoint,
    save_checkpoint,
    train_config_from_file,
)
from .evaluation import evaluate, report_to_text, run_ablation
from .gradcheck import format_results, run_all_checks
from .losses import LOSS_LOG_HEADER, loss_log_line


def _cmd_generate(args) -> int:
    spec = scenario_from_config(args.config)
    ds = generate_scenario(spec)
    save_dataset(ds, args.out)
    print(
        f"wrote {args.out}: {len(ds.source_x)} source / {len(ds.target_x)} target "
        f"samples, {ds.n_source_classes} source classes, "
        f"{ds.n_target_classes} shared"
    )
    return 0


def _cmd_train(args) -> int:
    config = (
        train_config_from_file(args.config) if args.config else TrainConfig()
    )
    ds = load_dataset(args.dataset)
    state = fit(config, ds.train_view())
    save_checkpoint(args.out, state)
    with open(f"{args.out}.losses.csv", "w", encoding="ascii") as fh:
        fh.write(LOSS_LOG_HEADER + "\n")
        for record in state.history:
            fh.write(
                loss_log_line(record.step, record.lr, record.alpha, record.losses)
                + "\n"
            )
    with open(f"{args.out}.labeling.txt", "w", encoding="ascii") as fh:
        for line in state.labeling_history:
            fh.write(line + "\n")
    if state.diverged:
        print(
            f"training diverged at step {state.step}; last good state saved to {args.out}",
            file=sys.stderr,
        )
        return 1
    final = state.history[-1].losses
    print(f"trained {state.epoch} epochs ({state.step} steps); final total loss {final.total:.6f}")
    print(f"checkpoint: {args.out}")
    return 0


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    report = evaluate(state, ds)
    text = report_to_text(report)
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(text)
    print(f"target accuracy: {report.accuracy:.4f} ({report.n_targets} samples)")
    print(f"report: {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    config = (
        train_config_from_file(args.config) if args.config else TrainConfig()
    )
    ds = load_dataset(args.dataset)
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    if not seeds:
        raise ValueError("--seeds must list at least one seed")
    result = run_ablation(config, ds, seeds, cdl_mode=args.ablation_cdl_mode)
    text = result.as_text()
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_all_checks()
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vipda",
        description="Partial domain adaptation on synthetic scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic scenario dataset")
    p.add_argument("--config", required=True, help="scenario config file (key = value)")
    p.add_argument("--out", required=True, help="output dataset file")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--config", help="training config file; defaults used if omitted")
    p.add_argument("--dataset", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output checkpoint file (.npz)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--dataset", required=True, help="dataset file with target labels")
    p.add_argument("--out", required=True, help="output report file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four-variant ablation grid")
    p.add_argument("--config", help="training config file; defaults used if omitted")
    p.add_argument("--dataset", required=True, help="dataset file with target labels")
    p.add_argument("--seeds", required=True, help="comma-separated seed list")
    p.add_argument(
        "--ablation-cdl-mode",
        choices=("cda-only", "all-var"),
        default="cda-only",
        help="what the no_cdl variant drops",
    )
    p.add_argument("--out", required=True, help="output table file")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="run all finite-difference gradient oracles")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli(sys.argv[1:]))
