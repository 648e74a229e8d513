"""Command-line entry points: train, infer, eval, ablate.

Exit codes: 0 success, 1 configuration error, 2 checkpoint error,
3 numerical failure during training.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import ablations
from . import config as cfgmod
from .checkpoint import load_checkpoint, load_params_into, save_checkpoint
from .diffusion import NOISE_INCLUSIVE, VARIANCE_FREE
from .errors import CheckpointError, ConfigError, NumericalError
from .evaluation import evaluate, infer_image
from .networks import ModelBundle
from .tasks import load_png, make_dataset, save_png
from .training import train_stage1, train_stage2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="priordiff",
        description="Few-step diffusion over a compact prior vector for toy image-to-image tasks.",
        epilog="config file keys (one 'key = value' per line):\n" + cfgmod.defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a stage-1 or stage-2 model")
    p_train.add_argument("config", help="run config path")
    p_train.add_argument("--stage", required=True, choices=["s1", "s2"])
    p_train.add_argument("--variant", choices=["v1", "v2", "v3", "v4"], default=None,
                         help="stage-2 training scheme (default from config)")
    p_train.add_argument("--dm-loss", choices=["l_diff", "l2", "kl"], default=None,
                         help="stage-2 prior regression loss (default from config)")
    p_train.add_argument("--init", default=None, help="stage-1 checkpoint (required for --stage s2)")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--metrics", default=None, help="metrics log path (default: <out>.metrics.log)")

    p_infer = sub.add_parser("infer", help="run inference with a stage-2 checkpoint")
    p_infer.add_argument("checkpoint")
    p_infer.add_argument("--input", required=True,
                         help="a PNG image or a run config describing the eval dataset")
    p_infer.add_argument("--seed", type=int, default=0)
    p_infer.add_argument("--out", required=True, help="output directory for PNG results")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a toy dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--dataset", default=None,
                        help="run config describing the dataset (default: the checkpoint's)")
    p_eval.add_argument("--report", required=True, help="report output path")
    p_eval.add_argument("--seed", type=int, default=None,
                        help="inference seed (default: the checkpoint's seed)")

    p_abl = sub.add_parser("ablate", help="run a paired ablation suite")
    p_abl.add_argument("config")
    p_abl.add_argument("--suite", required=True, choices=sorted(ablations.SUITES))
    p_abl.add_argument("--out", required=True, help="output directory for the CSV table")
    return parser


def _load_bundle(path: str):
    schedule, cfg_text, params = load_checkpoint(path)
    values = cfgmod.parse_config_text(cfg_text)
    bundle = ModelBundle.empty(cfgmod.model_config(values), values["stage"])
    load_params_into(bundle, params)
    return bundle, schedule, values


def cmd_train(args) -> int:
    values = cfgmod.load_config(args.config)
    values["stage"] = args.stage
    if args.variant:
        values["train.variant"] = args.variant
    if args.dm_loss:
        values["train.dm_loss"] = args.dm_loss
    tcfg = cfgmod.train_config(values, args.stage)
    mcfg = cfgmod.model_config(values)
    schedule = cfgmod.schedule_from(values)
    train_ds = make_dataset(cfgmod.dataset_spec(values, "train"))

    metrics_path = args.metrics or args.out + ".metrics.log"
    lines: list[str] = []
    log_fn = lambda rep: lines.append(rep.line())

    if args.stage == "s1":
        bundle, _ = train_stage1(tcfg, mcfg, train_ds, log_fn=log_fn)
    else:
        if not args.init:
            raise ConfigError("--stage s2 requires --init with a stage-1 checkpoint")
        s1_bundle, ck_schedule, init_values = _load_bundle(args.init)
        if init_values["stage"] != "s1" or s1_bundle.stage != "s1":
            raise CheckpointError("--init must point at a stage-1 checkpoint")
        bundle, _ = train_stage2(tcfg, schedule, s1_bundle, train_ds, log_fn=log_fn)

    save_checkpoint(args.out, bundle, schedule, cfgmod.serialize_config(values))
    with open(metrics_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote checkpoint {args.out} and metrics log {metrics_path}")
    return 0


def cmd_infer(args) -> int:
    bundle, schedule, values = _load_bundle(args.checkpoint)
    if bundle.stage != "s2":
        raise CheckpointError("inference requires stage-2 model")
    if args.input.endswith(".png"):
        inputs = [load_png(args.input)]
    else:
        ds_values = cfgmod.load_config(args.input)
        inputs = [s.model_input for s in make_dataset(cfgmod.dataset_spec(ds_values, "eval"))]
    variant = values["train.variant"]
    mode = NOISE_INCLUSIVE if variant == "v4" else VARIANCE_FREE
    os.makedirs(args.out, exist_ok=True)
    for i, model_input in enumerate(inputs):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=(args.seed, 20, i)))
        )
        out = infer_image(bundle, schedule, model_input, rng, variant, mode)
        save_png(np.clip(out, 0.0, 1.0), os.path.join(args.out, f"output_{i:03d}.png"))
    print(f"wrote {len(inputs)} image(s) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    bundle, schedule, values = _load_bundle(args.checkpoint)
    ds_values = cfgmod.load_config(args.dataset) if args.dataset else values
    samples = make_dataset(cfgmod.dataset_spec(ds_values, "eval"))
    seed = values["seed"] if args.seed is None else args.seed
    variant = values["train.variant"]
    mode = NOISE_INCLUSIVE if variant == "v4" else VARIANCE_FREE
    report = evaluate(bundle, schedule, samples, seed=seed, variant=variant, mode=mode)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
    print(f"mean_psnr={report.mean_psnr:.4f} mean_l1={report.mean_l1:.6f} -> {args.report}")
    return 0


def cmd_ablate(args) -> int:
    values = cfgmod.load_config(args.config)
    rows = ablations.SUITES[args.suite](values)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, f"{args.suite}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(ablations.format_csv(rows))
    print(ablations.format_table(rows))
    print(f"wrote {csv_path}")
    return 0


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
