"""Command-line entry point.

    resetreplay train --config c.json --seed 1 --out runs/a [--mode lorr] [--plot]
    resetreplay eval --config c.json --checkpoint runs/a/checkpoint.json
    resetreplay prime --config c.json --repeats 200 --out runs/prime
    resetreplay ablate-replay --config c.json --levels 1,2,3,5,10 --out runs/L
    resetreplay ablate-components --config c.json --out runs/comp
    resetreplay gen-data --task mod_add --size 512 --seed 7 --out data

Exit status: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import MODES, RunConfig
from .data import generate_dataset, write_jsonl
from .errors import ConfigError
from .experiments import (COMPONENT_VARIANTS, ablate_components, ablate_replay,
                          priming_experiment)
from .policy import load_checkpoint
from .replay import METRIC_FIELDS, TrainingRun, run_training
from .report import plot_curves, plot_summary_bars, plot_training, write_run
from .reward import pass_at_1
from .tasks import TASK_KINDS

log = logging.getLogger("resetreplay")


def _levels(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("levels must be integers >= 1")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resetreplay",
                                     description="Reset Replay preference optimization")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON run config (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the run seed")
        if out:
            p.add_argument("--out", help="output directory (default: config output_dir)")
        return p

    p = common(sub.add_parser("train", help="one training run"))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--plot", action="store_true", help="also render PNG figures")

    p = common(sub.add_parser("eval", help="pass@1 of a checkpoint on the held-out set"), False)
    p.add_argument("--checkpoint", required=True)

    p = common(sub.add_parser("prime", help="heavy priming vs standard over seeds"))
    p.add_argument("--repeats", type=int, default=200, help="updates on the first batch")
    p.add_argument("--plot", action="store_true")

    p = common(sub.add_parser("ablate-replay", help="sweep the replay number L"))
    p.add_argument("--levels", type=_levels, default=[1, 2, 3, 5, 10])
    p.add_argument("--plot", action="store_true")

    p = common(sub.add_parser("ablate-components", help="reset-data / hybrid / full / base"))
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("gen-data", help="write a synthetic JSONL dataset")
    p.add_argument("--task", choices=TASK_KINDS, default="mod_add")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    return parser


def _config(args, single_seed: bool) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed" if single_seed else "seeds"] = args.seed if single_seed else [args.seed]
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    return cfg.replace(**changes) if changes else cfg


def _out(args, cfg) -> str:
    return args.out or cfg.output_dir


def cmd_train(args) -> None:
    cfg = _config(args, True)
    out = _out(args, cfg)
    result = run_training(cfg)
    write_run(out, cfg, result, METRIC_FIELDS)
    if args.plot:
        plot_training(result.rows, os.path.join(out, "metrics.png"), f"{cfg.mode} seed {cfg.seed}")
    print(json.dumps({"out": out, "final_pass_at_1": result.final_pass_at_1}))


def cmd_eval(args) -> None:
    cfg = _config(args, True)
    run = TrainingRun(cfg)
    params = load_checkpoint(args.checkpoint)
    if params.dims != run.dims:
        raise ConfigError(f"checkpoint dims {params.dims} do not match config dims {run.dims}",
                          "model")
    print(json.dumps({"checkpoint": args.checkpoint,
                      "pass_at_1": pass_at_1(params, run.eval_set, run.verifier)}))


def cmd_prime(args) -> None:
    if args.repeats < 1:
        raise ConfigError("must be >= 1", "--repeats")
    cfg = _config(args, False)
    out = _out(args, cfg)
    _, summary, results = priming_experiment(cfg, args.repeats, out)
    if args.plot:
        _plot_seed_curves(results, ("standard", "primed"), cfg.seeds[0], out)
        plot_summary_bars(summary, "variant", os.path.join(out, "summary.png"), "run")
    print(json.dumps({"out": out, "summary": summary}))


def cmd_ablate_replay(args) -> None:
    cfg = _config(args, False)
    out = _out(args, cfg)
    _, summary = ablate_replay(cfg, args.levels, out)
    if args.plot:
        plot_summary_bars(summary, "L", os.path.join(out, "summary.png"), "replay number L")
    print(json.dumps({"out": out, "summary": summary}))


def cmd_ablate_components(args) -> None:
    cfg = _config(args, False)
    out = _out(args, cfg)
    _, summary, results = ablate_components(cfg, out)
    if args.plot:
        _plot_seed_curves(results, COMPONENT_VARIANTS, cfg.seeds[0], out)
        plot_summary_bars(summary, "variant", os.path.join(out, "summary.png"), "variant")
    print(json.dumps({"out": out, "summary": summary}))


def _plot_seed_curves(results, variants, seed, out) -> None:
    plot_curves({v: results[(v, seed)].rows for v in variants},
                os.path.join(out, f"curves_seed{seed}.png"))


def cmd_gen_data(args) -> None:
    if args.size < 1:
        raise ConfigError("must be >= 1", "--size")
    try:
        records = generate_dataset(args.task, args.size, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc), "--size") from None
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"{args.task}_{args.size}_seed{args.seed}.jsonl")
    write_jsonl(records, path)
    print(json.dumps({"out": path, "records": len(records)}))


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "prime": cmd_prime,
    "ablate-replay": cmd_ablate_replay,
    "ablate-components": cmd_ablate_components,
    "gen-data": cmd_gen_data,
}


def cli_entry(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"resetreplay: config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"resetreplay: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported, mapped to exit 1
        log.debug("failure", exc_info=True)
        print(f"resetreplay: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli_entry())


if __name__ == "__main__":
    main()
