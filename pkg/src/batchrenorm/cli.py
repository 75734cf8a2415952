"""Command-line entry point.

Subcommands: train (run an experiment config), gradcheck (finite-difference
verification of the backward passes), eval (score a checkpoint), compare
(merge run curves into one CSV). Exit codes: 0 success, 1 validation error
(bad flags, bad config, failed gradient check), 2 runtime abort (nonfinite
loss).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .harness import NonFiniteLossError, build_dataset, compare_runs, evaluate, run_experiment


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract reserves 2 for
    # runtime aborts, so remap to 1.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="batchrenorm")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="run an experiment config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="restrict the config's seed list to this one seed")
    p_train.add_argument("--out", default=None, help="override the output directory")

    p_gc = sub.add_parser("gradcheck", help="finite-difference backward checks")
    p_gc.add_argument("--mode", choices=(*gradcheck.MODES, "all"), default="all")
    p_gc.add_argument("--shape", default=None,
                      help="e.g. 8x3 (2D) or 4x3x2x2 (4D); default: both")
    p_gc.add_argument("--seed", type=int, default=None,
                      help="single seed; default: seeds 0, 1, 2")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--mode", default="moving_avg",
                        choices=("moving_avg", "train_mode"))

    p_cmp = sub.add_parser("compare", help="merge run curves into one CSV")
    p_cmp.add_argument("--runs", nargs="+", required=True,
                       help="run directories containing metrics.csv")
    p_cmp.add_argument("--out", default=None, help="write CSV here instead of stdout")
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    seeds = (args.seed,) if args.seed is not None else None
    try:
        results = run_experiment(cfg, out_dir=args.out, seeds=seeds)
    except NonFiniteLossError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        for name, norm_ in sorted(exc.norms.items()):
            print(f"  grad_norm {name} = {norm_:.6e}", file=sys.stderr)
        return 2
    for (arm, seed), rows in results.items():
        final = rows[-1]
        acc = final.acc_moving_avg
        acc_text = f"{acc:.4f}" if acc is not None else "n/a"
        print(f"{arm} seed={seed}: steps={final.step} "
              f"final acc_moving_avg={acc_text}")
    return 0


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        shape = tuple(int(tok) for tok in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad --shape {text!r}; expected e.g. 8x3")
    if len(shape) not in (2, 4):
        raise ConfigError("--shape must have 2 or 4 dims")
    return shape


def _cmd_gradcheck(args) -> int:
    modes = gradcheck.MODES if args.mode == "all" else (args.mode,)
    shapes = (
        (_parse_shape(args.shape),) if args.shape else gradcheck.DEFAULT_SHAPES
    )
    seeds = (args.seed,) if args.seed is not None else gradcheck.DEFAULT_SEEDS
    reports = gradcheck.default_suite(modes=modes, shapes=shapes, seeds=seeds)
    print(gradcheck.format_report_text(reports))
    for line in gradcheck.report_json_lines(reports):
        print(line)
    return 0 if all(r.passed for r in reports) else 1


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    net = load_checkpoint(args.checkpoint)
    _, val_ds = build_dataset(cfg)
    acc = evaluate(net, val_ds, args.mode, cfg=cfg, seed=cfg.seeds[0])
    print(f"{args.mode} accuracy: {acc:.4f}")
    return 0


def _cmd_compare(args) -> int:
    text = compare_runs([Path(p) for p in args.runs])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "compare":
            return _cmd_compare(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
