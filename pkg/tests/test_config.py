"""Config parsing, defaults, overrides, validation."""

from __future__ import annotations

import pytest

from fedrec.config import (
    ExperimentConfig,
    config_hash,
    config_to_text,
    parse_config,
    read_config_file,
)


def test_defaults_joint_ml1m():
    cfg = parse_config(None, {"dataset": "ml1m", "algorithm": "joint",
                              "data_path": "ratings.dat"})
    assert cfg.optimizer == "adam"
    assert cfg.learning_rate == 1e-3
    assert cfg.B == 500
    assert cfg.T == 800
    assert cfg.momentum == 0.9
    assert cfg.weight_decay == 5e-4
    assert cfg.binarize_threshold == 3.5


def test_defaults_joint_anime_batch():
    cfg = parse_config(None, {"dataset": "anime", "algorithm": "joint",
                              "data_path": "rating.csv"})
    assert cfg.B == 100
    assert cfg.binarize_threshold == 8.0


def test_defaults_personalfr_federated():
    cfg = parse_config(None, {"dataset": "ml1m", "algorithm": "personalfr",
                              "M": "300", "data_path": "ratings.dat"})
    assert cfg.optimizer == "sgd"
    assert cfg.learning_rate == 0.1
    assert cfg.B == 10
    assert cfg.K == 5
    assert cfg.M == 300


def test_flag_overrides_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dataset = synthetic\nT = 50\nseed = 1\n")
    cfg = parse_config(str(path), {"T": "7"})
    assert cfg.T == 7
    assert cfg.seed == 1


def test_unknown_key_is_hard_error(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("dataset = synthetic\nbatchsize = 10\n")
    with pytest.raises(ValueError, match="batchsize"):
        read_config_file(str(path))
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config(None, {"learningrate": "0.1"})


def test_missing_dataset_path():
    with pytest.raises(ValueError, match="data_path"):
        parse_config(None, {"dataset": "ml1m"})
    with pytest.raises(ValueError, match="data_path"):
        parse_config(None, {"dataset": "anime"})


def test_out_of_range_values():
    with pytest.raises(ValueError):
        parse_config(None, {"C": "0"})
    with pytest.raises(ValueError):
        parse_config(None, {"C": "1.5"})
    with pytest.raises(ValueError):
        parse_config(None, {"train_fraction": "1.0"})
    with pytest.raises(ValueError):
        parse_config(None, {"algorithm": "fedprox"})
    with pytest.raises(ValueError):
        parse_config(None, {"dtype": "float16"})
    with pytest.raises(ValueError, match="boolean"):
        parse_config(None, {"pc_enabled": "maybe"})


def test_eval_cadence_default_by_scale():
    small = parse_config(None, {"dataset": "synthetic", "T": "100"})
    assert small.eval_every == 1
    big = parse_config(None, {"dataset": "synthetic", "T": "800"})
    assert big.eval_every == 10
    forced = parse_config(None, {"dataset": "synthetic", "T": "800",
                                 "eval_every": "3"})
    assert forced.eval_every == 3


def test_comments_and_blank_lines(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n\ndataset = synthetic  # trailing\nseed = 3\n")
    cfg = parse_config(str(path))
    assert cfg.dataset == "synthetic" and cfg.seed == 3


def test_config_text_round_trip(tmp_path):
    cfg = parse_config(None, {"dataset": "synthetic", "T": "5", "seed": "9"})
    text = config_to_text(cfg)
    path = tmp_path / "echo.cfg"
    path.write_text(text)
    values = read_config_file(str(path))
    cfg2 = ExperimentConfig(**values)
    assert cfg2 == cfg


def test_config_hash_ignores_output_dir():
    a = parse_config(None, {"dataset": "synthetic", "output_dir": "x"})
    b = parse_config(None, {"dataset": "synthetic", "output_dir": "y"})
    c = parse_config(None, {"dataset": "synthetic", "output_dir": "x", "seed": "1"})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
