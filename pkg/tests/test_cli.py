"""End-to-end command-line pipeline: train, infer, eval, config handling."""
import numpy as np
import pytest

from priordiff.cli import main
from priordiff.config import SCHEMA, load_config, parse_config_text, serialize_config
from priordiff.errors import ConfigError
from priordiff.tasks import load_png

FAST_CFG = """
seed = 12
task.kind = inpaint
task.image_size = 16
task.train_count = 24
task.eval_count = 6
task.mask_ratio = 0.3
model.prior_channels = 4
model.decoder_channels = 8
model.extractor_width = 16
model.denoiser_width = 32
train.iterations = 40
train.batch_size = 4
train.log_every = 10
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One fast s1 -> s2 CLI pipeline shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(FAST_CFG)
    s1 = root / "s1.ckpt"
    s2 = root / "s2.ckpt"
    assert main(["train", str(cfg), "--stage", "s1", "--out", str(s1)]) == 0
    assert main(["train", str(cfg), "--stage", "s2", "--init", str(s1), "--out", str(s2)]) == 0
    return root, cfg, s1, s2


class TestConfigFile:
    def test_defaults_and_overrides(self):
        values = parse_config_text("seed = 7\ntrain.lr = 0.01\n")
        assert values["seed"] == 7
        assert values["train.lr"] == 0.01
        assert values["task.kind"] == "inpaint"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("task.size = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_text("task.image_size = big\n")

    def test_comments_and_blanks_ignored(self):
        values = parse_config_text("# hello\n\nseed = 2\n")
        assert values["seed"] == 2

    def test_serialize_round_trip(self):
        values = parse_config_text("seed = 5\ntask.kind = sr\n")
        again = parse_config_text(serialize_config(values))
        assert again == values

    def test_every_key_has_help(self):
        for key, (_, _, help_) in SCHEMA.items():
            assert help_, f"{key} lacks help text"


class TestTrainCommand:
    def test_s2_without_init_exits_1(self, workdir, capsys):
        root, cfg, s1, s2 = workdir
        rc = main(["train", str(cfg), "--stage", "s2", "--out", str(root / "x.ckpt")])
        assert rc == 1
        assert "--init" in capsys.readouterr().err

    def test_missing_config_exits_1(self, workdir):
        root, *_ = workdir
        assert main(["train", str(root / "nope.cfg"), "--stage", "s1", "--out", str(root / "x.ckpt")]) == 1

    def test_metrics_log_written(self, workdir):
        root, cfg, s1, s2 = workdir
        log = (root / "s1.ckpt.metrics.log").read_text().strip().splitlines()
        assert len(log) >= 2
        for line in log:
            assert line.startswith("step=") and "l_task=" in line and "l_all=" in line

    def test_checkpoints_byte_identical_across_runs(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        again = tmp_path / "s1b.ckpt"
        assert main(["train", str(cfg), "--stage", "s1", "--out", str(again)]) == 0
        assert again.read_bytes() == s1.read_bytes()

    def test_s2_init_must_be_stage1(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        rc = main(["train", str(cfg), "--stage", "s2", "--init", str(s2), "--out", str(tmp_path / "x.ckpt")])
        assert rc == 2

    def test_variant_flag_with_stage1_rejected(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        rc = main(["train", str(cfg), "--stage", "s1", "--variant", "v2", "--out", str(tmp_path / "x.ckpt")])
        assert rc == 1

    def test_numerical_failure_exits_3(self, workdir, tmp_path, monkeypatch, capsys):
        import priordiff.cli as cli
        from priordiff.errors import NumericalError

        root, cfg, s1, s2 = workdir

        def explode(*args, **kwargs):
            raise NumericalError("non-finite l_task at step 3 (l_task=nan)")

        monkeypatch.setattr(cli, "train_stage1", explode)
        rc = main(["train", str(cfg), "--stage", "s1", "--out", str(tmp_path / "x.ckpt")])
        assert rc == 3
        assert "numerical failure" in capsys.readouterr().err


class TestInferCommand:
    def test_stage1_checkpoint_rejected(self, workdir, tmp_path, capsys):
        root, cfg, s1, s2 = workdir
        rc = main(["infer", str(s1), "--input", str(cfg), "--seed", "0", "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "stage-2" in capsys.readouterr().err

    def test_dataset_inference_writes_pngs(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        out = tmp_path / "imgs"
        assert main(["infer", str(s2), "--input", str(cfg), "--seed", "5", "--out", str(out)]) == 0
        files = sorted(out.iterdir())
        assert len(files) == 6
        img = load_png(files[0])
        assert img.shape == (1, 16, 16)

    def test_fixed_seed_reproducible(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        a, b = tmp_path / "a", tmp_path / "b"
        main(["infer", str(s2), "--input", str(cfg), "--seed", "5", "--out", str(a)])
        main(["infer", str(s2), "--input", str(cfg), "--seed", "5", "--out", str(b)])
        for fa, fb in zip(sorted(a.iterdir()), sorted(b.iterdir())):
            assert fa.read_bytes() == fb.read_bytes()

    def test_different_seeds_differ_via_chain_start_only(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        a, b = tmp_path / "sa", tmp_path / "sb"
        main(["infer", str(s2), "--input", str(cfg), "--seed", "1", "--out", str(a)])
        main(["infer", str(s2), "--input", str(cfg), "--seed", "2", "--out", str(b)])
        differs = any(
            fa.read_bytes() != fb.read_bytes()
            for fa, fb in zip(sorted(a.iterdir()), sorted(b.iterdir()))
        )
        assert differs

    def test_png_input_round_trip(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        from priordiff.tasks import ToyDatasetSpec, make_sample, save_png

        spec = ToyDatasetSpec(kind="inpaint", image_size=16, count=1, seed=9, mask_ratio=0.3)
        png = tmp_path / "input.png"
        save_png(make_sample(spec, 0).model_input, png)
        out = tmp_path / "single"
        assert main(["infer", str(s2), "--input", str(png), "--seed", "0", "--out", str(out)]) == 0
        assert (out / "output_000.png").exists()


class TestEvalCommand:
    def test_report_contents(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        report = tmp_path / "report.txt"
        assert main(["eval", str(s2), "--report", str(report)]) == 0
        text = report.read_text().splitlines()
        assert text[0].startswith("mean_psnr = ")
        assert any(line.startswith("mean_l_diff = ") for line in text)
        assert any(line.startswith("decoder_macs = ") for line in text)
        rows = text[text.index("index psnr l1 l_diff") + 1 :]
        assert len(rows) == 6  # task.eval_count

    def test_stage1_eval_uses_teacher_prior(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        report = tmp_path / "report1.txt"
        assert main(["eval", str(s1), "--report", str(report)]) == 0
        assert "mean_l_diff = -" in report.read_text()

    def test_eval_is_deterministic(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        r1, r2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
        main(["eval", str(s2), "--seed", "3", "--report", str(r1)])
        main(["eval", str(s2), "--seed", "3", "--report", str(r2)])
        assert r1.read_text() == r2.read_text()

    def test_corrupt_checkpoint_exits_2(self, workdir, tmp_path):
        root, cfg, s1, s2 = workdir
        bad = tmp_path / "bad.ckpt"
        data = bytearray(s2.read_bytes())
        data[50] ^= 0xFF
        bad.write_bytes(bytes(data))
        assert main(["eval", str(bad), "--report", str(tmp_path / "r.txt")]) == 2
