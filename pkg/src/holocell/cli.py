"""Command-line entry point.

Subcommands: capacity (memory noise sweeps), train, eval, dump.
Every run writes a manifest into --out before any other artifact, and all
outputs are reproducible from (flags, seed) except wall-clock fields.

Exit codes: 0 success, 2 usage error, 3 data/IO error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, holo_memory, tasks, training
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ContractError, NumericalAbort

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[int]:
    """'5' -> [5]; '1..100' -> [1, 2, ..., 100]."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(text)]
    except ValueError:
        raise UsageError(f"bad range {text!r}; expected N or A..B") from None


def _default_seed() -> int:
    env = os.environ.get("HOLOCELL_SEED")
    return int(env) if env else 0


def _ensure_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, args: argparse.Namespace) -> None:
    doc = {
        "command": command,
        "library_version": __version__,
        "flags": {k: v for k, v in vars(args).items() if k != "func"},
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, default=str))


def cmd_capacity(args) -> int:
    items = parse_range(args.items)
    copies = parse_range(args.copies)
    if args.nh < 2 or args.nh % 2 or args.trials < 1:
        raise UsageError("--nh must be even >= 2 and --trials >= 1")
    if args.paired and len(items) != len(copies):
        raise UsageError("--paired needs equal-length --items and --copies ranges")
    out = _ensure_out(args)
    _write_manifest(out, "capacity", args)
    config = holo_memory.SweepConfig(items, copies, args.nh, args.trials,
                                     args.seed, paired=args.paired)
    reports = holo_memory.capacity_sweep(config)
    holo_memory.write_sweep_csv(reports, out / "sweep.csv")
    if args.image or args.roundtrip_items:
        if args.image:
            item = holo_memory.load_raw_rgb(args.image, args.width, args.height,
                                            args.channels)
        else:
            rng = np.random.default_rng(args.seed)
            item = rng.standard_normal(args.nh)
        est, mse = holo_memory.image_roundtrip(
            item, args.roundtrip_items or 1, args.roundtrip_copies, args.seed)
        est.astype("<f8").tofile(out / "reconstruction.bin")
        (out / "roundtrip.json").write_text(json.dumps({
            "n_items": args.roundtrip_items or 1,
            "n_copies": args.roundtrip_copies,
            "mse_per_element": mse,
        }, indent=1))
    return EXIT_OK


def _run_config_from(args) -> training.RunConfig:
    if args.task not in tasks.TASK_NAMES:
        raise UsageError(f"unknown task {args.task!r}")
    if args.model not in ("lstm", "alstm", "permrnn", "urnn", "murnn"):
        raise UsageError(f"unknown model {args.model!r}")
    if args.model != "alstm" and (args.copies != 1 or args.heads != 1):
        raise UsageError("--copies/--heads only apply to the alstm model")
    if args.copies < 1 or args.heads < 1:
        raise UsageError("--copies and --heads must be >= 1")
    try:
        return training.RunConfig(
            task=args.task, model=args.model, n_h=args.nh,
            n_copies=args.copies, n_heads=args.heads, layers=args.layers,
            minibatch=args.minibatch, tbptt_window=args.window,
            seed=args.seed, max_steps=args.steps, eval_every=args.eval_every,
            learning_rate=args.lr, adam_beta1=args.beta1,
            adam_beta2=args.beta2, adam_eps=args.adam_eps,
            forget_bias=args.forget_bias,
            input_bias=args.input_bias,
            use_h_for_update=args.use_h_update,
            alphabet_size=args.alphabet,
            bytes_path=args.bytes_path, test_fraction=args.test_fraction,
            eval_episodes=args.eval_episodes, eval_symbols=args.eval_symbols,
        )
    except ContractError as e:
        raise UsageError(str(e)) from e


def cmd_train(args) -> int:
    config = _run_config_from(args)
    out = _ensure_out(args)
    _write_manifest(out, "train", args)
    training.write_manifest(config, out / "run.json")

    def progress(rec):
        print(f"step {rec.step}  train {rec.train_cost:.4f}  "
              f"eval {rec.eval_cost:.4f}  acc {rec.masked_accuracy:.4f}",
              flush=True)

    training.train(config, out_dir=out, progress=progress)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _run_config_from(args)
    model = load_checkpoint(args.ckpt)
    n_x, n_out = training._task_vocabs(config)
    if model.config.n_x != n_x or model.config.n_out != n_out:
        raise CheckpointError(
            f"checkpoint expects dims ({model.config.n_x}, {model.config.n_out}), "
            f"task {config.task} needs ({n_x}, {n_out})")
    n = args.n if args.n is not None else (
        config.eval_episodes if config.task in ("copy", "copyvar")
        else config.eval_symbols)
    metrics = training.evaluate(model, config, n, seed_tag=(2, args.seed))
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_dump(args) -> int:
    if args.n < 0:
        raise UsageError("-n must be >= 0")
    chunks = []
    if args.task in ("copy", "copyvar"):
        for i in range(args.n):
            ep = tasks.gen_copy([args.seed, i], fixed_len=args.task == "copy",
                                alphabet_size=args.alphabet)
            chunks.append(tasks.format_episode(ep))
    elif args.task == "bytes":
        raise UsageError("dump does not support the bytes task")
    else:
        stream = {"xml": tasks.gen_xml, "assign": tasks.gen_var_assign,
                  "arith": tasks.gen_arithmetic}[args.task](args.seed)
        for i, ep in enumerate(stream.windows(args.window)):
            if i >= args.n:
                break
            chunks.append(tasks.format_episode(ep))
    sys.stdout.write("".join(chunks))
    return EXIT_OK


def _add_train_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--nh", type=int, default=128)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--minibatch", type=int, default=2)
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--eval-every", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--forget-bias", type=float, default=0.0)
    p.add_argument("--input-bias", type=float, default=0.0)
    p.add_argument("--use-h-update", action="store_true")
    p.add_argument("--alphabet", type=int, default=8)
    p.add_argument("--bytes-path", default=None)
    p.add_argument("--test-fraction", type=float, default=0.05)
    p.add_argument("--eval-episodes", type=int, default=200)
    p.add_argument("--eval-symbols", type=int, default=20000)
    p.add_argument("--threads", type=int, default=1,
                   help="upper bound on worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="holocell")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="associative-memory noise sweeps")
    p.add_argument("--items", required=True, help="N or A..B")
    p.add_argument("--copies", required=True, help="N or A..B")
    p.add_argument("--nh", type=int, required=True)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--paired", action="store_true",
                   help="zip items and copies instead of the product")
    p.add_argument("--image", default=None, help="raw RGB file to round-trip")
    p.add_argument("--width", type=int, default=110)
    p.add_argument("--height", type=int, default=110)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--roundtrip-items", type=int, default=0)
    p.add_argument("--roundtrip-copies", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("train", help="train a model on a task")
    _add_train_eval_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_train_eval_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("-n", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump", help="print task samples with mask underlining")
    p.add_argument("--task", required=True)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--alphabet", type=int, default=8)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ContractError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
