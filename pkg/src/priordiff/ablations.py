"""Paired ablation experiments with shared seeds: training-scheme variants,
prior regression losses, and the diffusion step-count sweep."""
from __future__ import annotations

from . import config as cfgmod
from .diffusion import NOISE_INCLUSIVE, VARIANCE_FREE
from .evaluation import evaluate
from .networks import ModelBundle
from .schedule import linear_schedule, solve_beta_end
from .tasks import make_dataset
from .training import train_stage1, train_stage2

VARIANT_ORDER = ("v1", "v2", "v3", "v4")
LOSS_ORDER = ("l_diff", "l2", "kl")
ITERATION_SWEEP = (1, 2, 3, 4, 8)


def _prepare(values: dict):
    train_ds = make_dataset(cfgmod.dataset_spec(values, "train"))
    eval_ds = make_dataset(cfgmod.dataset_spec(values, "eval"))
    mcfg = cfgmod.model_config(values)
    return train_ds, eval_ds, mcfg


def _train_s1(values: dict, mcfg, train_ds) -> ModelBundle:
    bundle, _ = train_stage1(cfgmod.train_config(values, "s1"), mcfg, train_ds)
    return bundle


def eval_mode(variant: str) -> str:
    return NOISE_INCLUSIVE if variant == "v4" else VARIANCE_FREE


def run_variants_suite(values: dict) -> list[dict]:
    """Stage-2 training schemes v1..v4 against one shared stage-1 bundle."""
    train_ds, eval_ds, mcfg = _prepare(values)
    schedule = cfgmod.schedule_from(values)
    s1 = _train_s1(values, mcfg, train_ds)
    rows = []
    for variant in VARIANT_ORDER:
        tcfg = cfgmod.train_config(values, "s2", variant=variant)
        bundle, _ = train_stage2(tcfg, schedule, s1, train_ds)
        rep = evaluate(bundle, schedule, eval_ds, seed=values["seed"], variant=variant,
                       mode=eval_mode(variant))
        rows.append(
            {
                "variant": variant,
                "psnr": rep.mean_psnr,
                "l1": rep.mean_l1,
                "l_diff": rep.mean_l_diff,
            }
        )
    return rows


def run_losses_suite(values: dict) -> list[dict]:
    """The three prior regression losses under the default joint scheme."""
    train_ds, eval_ds, mcfg = _prepare(values)
    schedule = cfgmod.schedule_from(values)
    s1 = _train_s1(values, mcfg, train_ds)
    rows = []
    for dm_loss in LOSS_ORDER:
        tcfg = cfgmod.train_config(values, "s2", variant="v3", dm_loss=dm_loss)
        bundle, _ = train_stage2(tcfg, schedule, s1, train_ds)
        rep = evaluate(bundle, schedule, eval_ds, seed=values["seed"], variant="v3")
        rows.append(
            {
                "dm_loss": dm_loss,
                "psnr": rep.mean_psnr,
                "l1": rep.mean_l1,
                "l_diff": rep.mean_l_diff,
            }
        )
    return rows


def run_iterations_suite(values: dict) -> list[dict]:
    """Step-count sweep; the schedule endpoint is re-solved per T so the
    diffused prior stays close to pure noise."""
    train_ds, eval_ds, mcfg = _prepare(values)
    beta_start = values["schedule.beta_start"]
    s1 = _train_s1(values, mcfg, train_ds)
    rows = []
    for steps in ITERATION_SWEEP:
        beta_end = solve_beta_end(steps, beta_start)
        schedule = (
            linear_schedule(steps, beta_end, beta_end)
            if steps == 1
            else linear_schedule(steps, beta_start, beta_end)
        )
        tcfg = cfgmod.train_config(values, "s2", variant="v3")
        bundle, _ = train_stage2(tcfg, schedule, s1, train_ds)
        rep = evaluate(bundle, schedule, eval_ds, seed=values["seed"], variant="v3")
        rows.append(
            {
                "steps": steps,
                "beta_end": beta_end,
                "psnr": rep.mean_psnr,
                "l1": rep.mean_l1,
                "l_diff": rep.mean_l_diff,
            }
        )
    return rows


SUITES = {
    "variants": run_variants_suite,
    "losses": run_losses_suite,
    "iterations": run_iterations_suite,
}


def format_table(rows: list[dict]) -> str:
    keys = list(rows[0])
    widths = [max(len(k), 12) for k in keys]
    lines = ["  ".join(k.ljust(w) for k, w in zip(keys, widths))]
    for row in rows:
        cells = []
        for k, w in zip(keys, widths):
            v = row[k]
            cells.append((f"{v:.4f}" if isinstance(v, float) else str(v)).ljust(w))
        lines.append("  ".join(cells))
    return "\n".join(lines)


def format_csv(rows: list[dict]) -> str:
    keys = list(rows[0])
    lines = [",".join(keys)]
    for row in rows:
        lines.append(",".join(f"{row[k]:.6f}" if isinstance(row[k], float) else str(row[k]) for k in keys))
    return "\n".join(lines) + "\n"
