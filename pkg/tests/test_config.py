import argparse

import pytest

from kge.config import (
    DEFAULTS,
    SCHEMA,
    RunConfig,
    add_config_arguments,
    add_query_arguments,
    load_config_file,
    parse_value,
    resolve_config,
)
from kge.encoder import EXPANSION, MEM
from kge.errors import ConfigError


def _parser():
    parser = argparse.ArgumentParser()
    add_config_arguments(parser)
    return parser


def test_defaults():
    config = RunConfig()
    assert config["eval.lambda"] == 0.2
    assert config["eval.k"] == 64
    assert config["eval.filtered"] is True
    assert config["split.holdout"] is None
    assert set(DEFAULTS) == set(SCHEMA)


def test_eval_and_train_views():
    config = RunConfig({"eval.lambda": 0.5, "eval.directions": ("tail",), "seed": 3})
    ev = config.eval_config()
    assert (ev.lam, ev.k, ev.directions) == (0.5, 64, ("tail",))
    train = config.train_config(MEM)
    assert (train.stage, train.seed, train.dim) == (MEM, 3, 64)
    assert config.train_config(EXPANSION).epochs == DEFAULTS["train.expansion.epochs"]
    with pytest.raises(ValueError):
        config.train_config("pretraining")


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# tiny run\n"
        "model.dim = 16\n"
        "sweep.lambdas = 0, 0.5, 1\n"
        "eval.filtered = no   # raw ranks\n"
        "\n",
        encoding="utf-8",
    )
    values = load_config_file(path)
    assert values == {"model.dim": 16, "sweep.lambdas": (0.0, 0.5, 1.0), "eval.filtered": False}


def test_unknown_key_names_the_line(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.dim = 16\nmodel.width = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=r"run\.cfg:2"):
        load_config_file(path)


def test_line_without_equals(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("model.dim 16\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=":1"):
        load_config_file(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config_file(tmp_path / "nope.cfg")


def test_bad_value():
    with pytest.raises(ConfigError, match="eval.k"):
        parse_value("eval.k", "many")
    with pytest.raises(ConfigError):
        parse_value("eval.filtered", "maybe")
    with pytest.raises(ConfigError):
        parse_value("nonsense", "1")


def test_flags_override_file_override_defaults(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("eval.k = 8\neval.lambda = 0.4\n", encoding="utf-8")
    args = _parser().parse_args(["--config", str(path), "--lambda", "0.7"])
    config = resolve_config(args)
    assert config["eval.lambda"] == 0.7
    assert config["eval.k"] == 8
    assert config["model.dim"] == DEFAULTS["model.dim"]


def test_aliases_and_long_flags_share_a_key():
    short = resolve_config(_parser().parse_args(["--k", "4", "--mode", "inductive", "--ks", "1,2"]))
    long = resolve_config(_parser().parse_args(["--eval.k", "4", "--split.mode", "inductive", "--sweep.ks", "1,2"]))
    assert short == long
    assert short["sweep.ks"] == (1, 2)


def test_bad_flag_value_is_a_usage_error():
    with pytest.raises(SystemExit):
        _parser().parse_args(["--eval.k", "many"])


@pytest.mark.parametrize("values", [
    {"eval.lambda": 1.5},
    {"eval.k": 0},
    {"split.mode": "sideways"},
    {"store.sources": ("descriptions", "web")},
    {"subsample.fractions": (0.0, 1.0)},
    {"store.temperature": 0.0},
    {"eval.split": "train"},
    {"not.a.key": 1},
])
def test_invalid_configs(values):
    with pytest.raises(ConfigError):
        RunConfig(values)


def test_eval_view_rejects_bad_directions():
    with pytest.raises(ConfigError):
        RunConfig({"eval.directions": ("up",)}).eval_config()


def test_with_values_and_as_dict():
    config = RunConfig().with_values(eval__lambda=0.0, model__ffn=32)
    assert config["eval.lambda"] == 0.0 and config["model.ffn"] == 32
    dumped = config.as_dict()
    assert list(dumped) == sorted(dumped)
    assert dumped["eval.directions"] == ["head", "tail"]
    assert RunConfig() != config


def test_query_arguments():
    parser = argparse.ArgumentParser()
    add_query_arguments(parser)
    args = parser.parse_args(["--relation", "lives", "--head", "Plato"])
    assert (args.relation, args.head, args.tail) == ("lives", "Plato", None)
    with pytest.raises(SystemExit):
        parser.parse_args(["--relation", "lives", "--head", "Plato", "--tail", "Athens"])
    with pytest.raises(SystemExit):
        parser.parse_args(["--relation", "lives"])


def test_explicit_keys_track_file_and_flags(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("split.mode = transductive\n", encoding="utf-8")
    from_file = resolve_config(_parser().parse_args(["--config", str(path), "--k", "4"]))
    assert from_file.explicit == {"split.mode", "eval.k"}
    assert resolve_config(_parser().parse_args([])).explicit == frozenset()
    # equal values, different provenance
    assert from_file == RunConfig({"eval.k": 4})
    assert "split.mode" not in RunConfig({"eval.k": 4}).explicit


def test_full_batch_and_description_defaults():
    config = RunConfig()
    assert config.train_config(EXPANSION).batch_size is None
    assert config.train_config(MEM).descriptions is True
    off = resolve_config(_parser().parse_args(["--train.mem.descriptions", "no", "--train.mem.batch_size", "none"]))
    assert off.train_config(MEM).descriptions is False
    assert off.train_config(MEM).batch_size is None
    assert off.explicit == {"train.mem.descriptions", "train.mem.batch_size"}
