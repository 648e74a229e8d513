"""Ablation suite contracts: row counts, CSV shape, and the CLI wrapper."""
import numpy as np
import pytest

from priordiff.ablations import (
    ITERATION_SWEEP,
    format_csv,
    format_table,
    run_iterations_suite,
    run_losses_suite,
    run_variants_suite,
)
from priordiff.cli import main
from priordiff.config import parse_config_text

FAST = parse_config_text(
    """
seed = 4
task.image_size = 16
task.train_count = 16
task.eval_count = 4
model.prior_channels = 4
model.decoder_channels = 8
model.extractor_width = 16
model.denoiser_width = 32
train.iterations = 12
train.batch_size = 4
"""
)


@pytest.fixture(scope="module")
def variant_rows():
    return run_variants_suite(dict(FAST))


class TestVariantsSuite:
    def test_emits_exactly_four_rows(self, variant_rows):
        assert [r["variant"] for r in variant_rows] == ["v1", "v2", "v3", "v4"]

    def test_rows_carry_metrics(self, variant_rows):
        for row in variant_rows:
            assert np.isfinite(row["psnr"]) and np.isfinite(row["l1"])

    def test_formatting(self, variant_rows):
        table = format_table(variant_rows)
        assert table.splitlines()[0].startswith("variant")
        assert len(table.splitlines()) == 5
        csv = format_csv(variant_rows)
        assert csv.splitlines()[0] == "variant,psnr,l1,l_diff"
        assert len(csv.strip().splitlines()) == 5


class TestLossesSuite:
    def test_emits_exactly_three_rows(self):
        rows = run_losses_suite(dict(FAST))
        assert [r["dm_loss"] for r in rows] == ["l_diff", "l2", "kl"]


class TestIterationsSuite:
    def test_sweep_covers_pinned_step_counts(self):
        rows = run_iterations_suite(dict(FAST))
        assert [r["steps"] for r in rows] == list(ITERATION_SWEEP)
        # the endpoint is re-solved so the diffused prior is near-noise per T
        for row in rows:
            assert 0.0 < row["beta_end"] < 1.0


class TestAblateCommand:
    def test_cli_writes_csv(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "seed = 4\ntask.image_size = 16\ntask.train_count = 12\ntask.eval_count = 3\n"
            "model.prior_channels = 4\nmodel.decoder_channels = 8\n"
            "model.extractor_width = 16\nmodel.denoiser_width = 32\n"
            "train.iterations = 8\ntrain.batch_size = 4\n"
        )
        out = tmp_path / "tables"
        assert main(["ablate", str(cfg), "--suite", "losses", "--out", str(out)]) == 0
        csv = (out / "losses.csv").read_text().strip().splitlines()
        assert csv[0] == "dm_loss,psnr,l1,l_diff"
        assert len(csv) == 4
