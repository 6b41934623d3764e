import numpy as np
import pytest

from grcnn.cli import run
from grcnn.config import apply_overrides, parse_config
from grcnn.errors import ConfigError

CONFIG = "configs/blobs_small.cfg"


@pytest.fixture
def config(request):
    return str(request.config.rootpath / CONFIG)


class TestConfig:
    def test_sections(self):
        out = parse_config("[train]\nlr0 = 0.2  # comment\n[model]\nvariant = rcl\n")
        assert out == {"train": {"lr0": "0.2"}, "model": {"variant": "rcl"}}

    def test_unknown_key_lists_valid_keys(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[train]\nlearning_rate = 1\n")
        for key in ("lr0", "batch_size", "variant", "max_images"):
            assert key in str(exc.value)

    def test_key_outside_section(self):
        with pytest.raises(ConfigError, match="section"):
            parse_config("lr0 = 1\n")

    def test_overrides(self):
        out = apply_overrides({}, ["lr0=0.3", "model.variant=rcl"])
        assert out == {"train": {"lr0": "0.3"}, "model": {"variant": "rcl"}}
        with pytest.raises(ConfigError):
            apply_overrides({}, ["nonsense=1"])


class TestCommands:
    def test_verify(self, capsys):
        assert run(["verify"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 4 and all(line.startswith("PASS") for line in lines)

    def test_bad_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[model]\nwidth = 3\n")
        assert run(["export-spec", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "valid keys" in capsys.readouterr().err

    def test_unknown_command_exit_2(self):
        assert run(["fly"]) == 2

    def test_train_twice_is_deterministic(self, config, tmp_path, capsys):
        digests = []
        for name in ("a", "b"):
            assert run(["train", "--config", config, "--seed", "7", "--deterministic",
                        "--out", str(tmp_path / name)]) == 0
            digests.append([l for l in capsys.readouterr().out.splitlines() if "sha256" in l][0])
        assert digests[0] == digests[1]
        assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()

    def test_eval_and_mismatch(self, config, tmp_path, capsys):
        assert run(["train", "--config", config, "--override", "epochs=1", "--out", str(tmp_path)]) == 0
        ckpt = str(tmp_path / "final.ckpt")
        capsys.readouterr()
        assert run(["eval", "--config", config, "--checkpoint", ckpt]) == 0
        assert capsys.readouterr().out.startswith("accuracy ")
        assert run(["eval", "--config", config, "--checkpoint", ckpt, "--override", "channels=16,32"]) == 2
        assert "shape" in capsys.readouterr().err

    def test_gates_and_rf(self, config, tmp_path):
        assert run(["gates", "--config", config, "--out", str(tmp_path)]) == 0
        for table in ("mean", "std", "variance"):
            assert (tmp_path / f"gates_{table}.csv").exists()
        assert run(["rf", "--config", config, "--out", str(tmp_path)]) == 0
        assert len((tmp_path / "rf.csv").read_text().splitlines()) == 1 + 32 * 32

    def test_gates_on_rcl_fails(self, config, tmp_path):
        assert run(["gates", "--config", config, "--override", "variant=rcl", "--out", str(tmp_path)]) == 1

    def test_export_spec(self, config, tmp_path, capsys):
        assert run(["export-spec", "--config", config, "--out", str(tmp_path)]) == 0
        text = (tmp_path / "model.cfg").read_text()
        assert "variant = grcl_improved" in text
        assert "# parameters" in capsys.readouterr().out

    def test_gradcheck_command(self, capsys):
        assert run(["gradcheck", "--instances", "1"]) == 0
        assert "within 0.0001" in capsys.readouterr().out
