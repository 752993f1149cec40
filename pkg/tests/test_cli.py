from __future__ import annotations

import json

import pytest

from cli.app import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from cli.schemas import CONFIG_NAME, RunConfig, load_config, parse_config, render_config
from cli.services import CHECKPOINT_NAME, LOSSES_NAME, TRAIN_LOG_NAME, build_services
from swincd.errors import ConfigError
from swincd.pipeline.checkpoint import load_checkpoint
from swincd.settings import ModelConfig, RuntimeSettings, TrainConfig

TRAIN_CONFIG = """\
# one optimisation step on the toy model
model.decoder_depth = 2
train.epochs = 1
train.max_steps = 1
train.lr0 = 0.01
train.batch = 2
"""


@pytest.fixture
def services():
    return build_services(RuntimeSettings(log_level="WARNING", workers=2, precision=64))


@pytest.fixture
def dataset(services, tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--n", "2", "--size", "64", "--seed", "3"], services) == EXIT_OK
    return out


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------
def test_config_round_trip(toy_config):
    config = RunConfig.from_settings(
        model=toy_config,
        train=TrainConfig(lr0=0.0125, max_steps=7, augment=False),
        data="in",
    )
    text = render_config(config)
    assert "model.input_size = 64,64" in text
    assert "train.max_steps = 7" in text and "paths.out = none" in text
    assert parse_config(text) == config


def test_config_defaults_and_overrides():
    assert load_config(None) == RunConfig()
    config = parse_config("model.use_dfe = false\nloss.alpha = 1, 0.5, 0.5, 0.25, 0\ntrain.max_steps = none\n")
    assert config.model_settings().use_dfe is False
    assert config.loss_settings().alpha == (1.0, 0.5, 0.5, 0.25, 0.0)
    assert config.train_settings().max_steps is None


@pytest.mark.parametrize(
    ("text", "message"),
    [
        ("model.depth 3", "expected 'section.key = value'"),
        ("optim.lr = 1", "unknown section"),
        ("train.lr0 = 1\ntrain.lr0 = 2", "duplicate key"),
        ("train.lr_zero = 1", "lr_zero"),
        ("train.batch = two", "train.batch"),
        ("train.momentum = 1.5", "momentum"),
        ("model.input_size = 96,96", "multiple of 64"),
    ],
)
def test_config_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text, "run.txt")


def test_hash_inside_a_value_is_kept():
    config = parse_config("# run\npaths.data = runs/#7  # second try\n")
    assert config.paths.data == "runs/#7"
    with pytest.raises(ConfigError, match="train.epochs"):
        parse_config("train.epochs = 3#x\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.txt")


def test_runtime_settings_from_env(monkeypatch):
    monkeypatch.setenv("SWINCD_PRECISION", "64")
    monkeypatch.setenv("SWINCD_WORKERS", "3")
    monkeypatch.setenv("SWINCD_LOG_LEVEL", "debug")
    settings = RuntimeSettings.from_env()
    assert (settings.precision, settings.workers, settings.log_level) == (64, 3, "DEBUG")
    monkeypatch.setenv("SWINCD_PRECISION", "16")
    with pytest.raises(ConfigError):
        RuntimeSettings.from_env()


# ---------------------------------------------------------------------------
# Exit codes
# ---------------------------------------------------------------------------
def test_help_and_version_exit_cleanly(services, capsys):
    assert main(["--version"], services) == EXIT_OK
    assert "swincd" in capsys.readouterr().out
    assert main(["train", "--help"], services) == EXIT_OK


def test_usage_errors(services, tmp_path):
    assert main(["fly"], services) == EXIT_USAGE
    assert main(["synth"], services) == EXIT_USAGE
    assert main(["train", "--out", str(tmp_path)], services) == EXIT_USAGE
    assert main(["gradcheck", "--sections", "everything"], services) == EXIT_USAGE


def test_bad_config_is_a_usage_error(services, tmp_path, dataset):
    path = tmp_path / "bad.txt"
    path.write_text("train.bogus = 1\n")
    assert main(["train", "--config", str(path), "--data", str(dataset), "--out", str(tmp_path / "run")],
                services) == EXIT_USAGE


def test_data_errors(services, tmp_path):
    assert main(["eval", "--pred", str(tmp_path), "--gt", str(tmp_path / "nothing"), "--out", str(tmp_path)],
                services) == EXIT_DATA
    assert main(["synth", "--out", str(tmp_path / "d"), "--size", "60"], services) == EXIT_DATA


def test_failed_gradient_check_is_a_numeric_error(services, capsys):
    code = main(["gradcheck", "--sections", "swin", "--instances", "1", "--tol", "0"], services)
    assert code == EXIT_NUMERIC
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_passes(services, capsys):
    assert main(["gradcheck", "--sections", "losses", "--instances", "1"], services) == EXIT_OK
    out = capsys.readouterr().out
    assert "within tolerance" in out
    components = [line.split()[1] for line in out.splitlines() if line.startswith(("PASS", "FAIL"))]
    assert components == ["loss.wbce", "loss.ssim", "loss.siou"]
    for line in out.splitlines()[:3]:
        assert line.startswith("PASS") and "max_rel_error=" in line


# ---------------------------------------------------------------------------
# Commands end to end
# ---------------------------------------------------------------------------
def test_eval_of_ground_truth_against_itself(services, dataset, tmp_path):
    report_dir = tmp_path / "report"
    assert main(["eval", "--pred", str(dataset), "--gt", str(dataset), "--out", str(report_dir)], services) == EXIT_OK
    report = json.loads((report_dir / "metrics.json").read_text())
    assert report["f1"] == 1.0 and report["mba"] == 1.0 and report["images"] == 2
    assert "f1 = 1.0" in (report_dir / "metrics.txt").read_text()


def test_tile_command(services, dataset, tmp_path):
    out = tmp_path / "tiles"
    assert main(["tile", "--in", str(dataset), "--out", str(out), "--size", "32"], services) == EXIT_OK
    assert len((out / "manifest.tsv").read_text().splitlines()) == 8


def test_train_predict_eval(services, dataset, tmp_path, capsys):
    config = tmp_path / "run.txt"
    config.write_text(TRAIN_CONFIG)
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--data", str(dataset), "--out", str(run)], services) == EXIT_OK
    for name in (CHECKPOINT_NAME, CONFIG_NAME, TRAIN_LOG_NAME, LOSSES_NAME, "VERSION"):
        assert (run / name).exists(), name
    assert load_config(run / CONFIG_NAME).model_settings() == ModelConfig.toy()
    assert len((run / LOSSES_NAME).read_text().splitlines()) == 1
    assert "epoch 1 steps=1" in capsys.readouterr().out

    preds = tmp_path / "preds"
    assert main(["predict", "--ckpt", str(run / CHECKPOINT_NAME), "--data", str(dataset), "--out", str(preds),
                 "--sides"], services) == EXIT_OK
    assert len(list((preds / "prob").glob("*.f32"))) == 2
    assert len(list((preds / "sides").glob("*.f32"))) == 10

    report_dir = tmp_path / "report"
    assert main(["eval", "--pred", str(preds), "--gt", str(dataset), "--out", str(report_dir)], services) == EXIT_OK
    report = json.loads((report_dir / "metrics.json").read_text())
    assert 0.0 <= report["f1"] <= 1.0
    assert len(report["roc"]) == 101
    assert set(report["side_f1"]) == {f"side{k}" for k in range(1, 6)}


def test_resume_continues_the_step_count(services, dataset, tmp_path):
    config = tmp_path / "run.txt"
    config.write_text(TRAIN_CONFIG.replace("train.max_steps = 1", "train.max_steps = 2"))
    first, second = tmp_path / "a", tmp_path / "b"
    args = ["train", "--config", str(config), "--data", str(dataset)]
    assert main(args + ["--out", str(first)], services) == EXIT_OK
    assert main(args + ["--out", str(second), "--resume", str(first / CHECKPOINT_NAME)], services) == EXIT_OK
    assert load_checkpoint(first / CHECKPOINT_NAME).step == 1
    assert load_checkpoint(second / CHECKPOINT_NAME).step == 2
