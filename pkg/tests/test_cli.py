import json
from pathlib import Path

import pytest

from batchrenorm.cli import main


def write_tiny_config(tmp_path, **edits) -> Path:
    text = Path("configs/baseline.cfg").read_text()
    replacements = {
        "per_class = 400": "per_class = 50",
        "hidden = 64, 64": "hidden = 8",
        "total_steps = 5000": "total_steps = 30",
        "eval_every = 500": "eval_every = 30",
        "seeds = 1, 2, 3, 4, 5": "seeds = 1",
        "warmup_steps = 300": "warmup_steps = 3",
        "r_ramp_end = 2400": "r_ramp_end = 10",
        "d_ramp_end = 1500": "d_ramp_end = 8",
        "lr_decay_step = 4000": "lr_decay_step = 0",
        **edits,
    }
    for old, new in replacements.items():
        assert old in text, old
        text = text.replace(old, new)
    path = tmp_path / "tiny.cfg"
    path.write_text(text)
    return path


class TestTrain:
    def test_run_writes_outputs(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "config-resolved.json").exists()
        for arm in ("batchnorm", "batchrenorm"):
            assert (out / arm / "seed1" / "metrics.csv").exists()
            assert (out / arm / "seed1" / "checkpoint.brnl").exists()
        stdout = capsys.readouterr().out
        assert "final acc_moving_avg" in stdout

    def test_seed_flag_restricts_runs(self, tmp_path):
        cfg = write_tiny_config(tmp_path, **{"seeds = 1": "seeds = 1, 2"})
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--out", str(out),
                     "--seed", "2"]) == 0
        assert (out / "batchnorm" / "seed2").exists()
        assert not (out / "batchnorm" / "seed1").exists()

    def test_missing_config_exits_1(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "none.cfg")]) == 1
        assert "error" in capsys.readouterr().err

    def test_schedule_anchor_validation_names_field(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path, **{"total_steps = 30": "total_steps = 5"})
        assert main(["train", "--config", str(cfg)]) == 1
        assert "schedule.r_ramp_end" in capsys.readouterr().err

    def test_nonfinite_abort_exits_2(self, tmp_path, capsys):
        cfg = write_tiny_config(
            tmp_path,
            **{
                "arms = batchnorm, batchrenorm": "arms = none",
                "kind = rmsprop             ; sgd | momentum | rmsprop": "kind = sgd",
                "lr = 0.03": "lr = 1e18",
            },
        )
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 2
        err = capsys.readouterr().err
        assert "aborted" in err and "grad_norm" in err


class TestUsageErrors:
    def test_unknown_flag_exits_1_with_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--config", "x", "--bogus"])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_missing_required_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_default_suite_exits_0(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "max_rel_err" in out
        json_lines = [ln for ln in out.splitlines() if ln.startswith("{")]
        assert json_lines
        for ln in json_lines:
            assert json.loads(ln)["pass"] is True

    def test_single_mode_and_shape(self, capsys):
        assert main(["gradcheck", "--mode", "brn-clipped", "--shape", "4x3",
                     "--seed", "7"]) == 0
        out = capsys.readouterr().out
        assert "brn-clipped 4x3 seed=7" in out

    def test_bad_shape_exits_1(self, capsys):
        assert main(["gradcheck", "--shape", "4x3x2"]) == 1
        assert "shape" in capsys.readouterr().err


class TestEvalCommand:
    def test_eval_checkpoint(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        out = tmp_path / "out"
        main(["train", "--config", str(cfg), "--out", str(out)])
        ckpt = out / "batchrenorm" / "seed1" / "checkpoint.brnl"
        assert main(["eval", "--checkpoint", str(ckpt), "--config", str(cfg),
                     "--mode", "moving_avg"]) == 0
        assert "accuracy" in capsys.readouterr().out

    def test_bad_checkpoint_exits_1(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        bad = tmp_path / "bad.brnl"
        bad.write_bytes(b"NOPE" + b"\x00" * 32)
        assert main(["eval", "--checkpoint", str(bad), "--config", str(cfg)]) == 1
        assert "error" in capsys.readouterr().err


class TestCompareCommand:
    def test_merged_csv(self, tmp_path, capsys):
        cfg = write_tiny_config(tmp_path)
        out = tmp_path / "out"
        main(["train", "--config", str(cfg), "--out", str(out)])
        merged = tmp_path / "merged.csv"
        assert main([
            "compare", "--runs",
            str(out / "batchnorm" / "seed1"),
            str(out / "batchrenorm" / "seed1"),
            "--out", str(merged),
        ]) == 0
        lines = merged.read_text().strip().splitlines()
        assert lines[0].startswith("step,")
        assert len(lines[0].split(",")) == 5
