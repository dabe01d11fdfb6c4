# config.py
# Flat namespaced run configuration: built-in defaults < config file < command-line flags
# The resolved mapping is echoed into every report, so every value here must be JSON-friendly

import argparse
from types import MappingProxyType

from kge.encoder import EXPANSION, MEM, TrainConfig
from kge.errors import ConfigError
from kge.evaluation import DIRECTIONS, EvalConfig
from kge.graph import MODES
from kge.store import SOURCES

# ================= VALUE PARSERS =================

def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(kind):
    def parse(text):
        if text is None:
            return None
        value = str(text).strip().lower()
        return None if value in ("", "none") else kind(value)
    parse.__name__ = f"optional[{kind.__name__}]"
    return parse


_optional_int = _optional(int)


def _list_of(item):
    def parse(text):
        if isinstance(text, (list, tuple)):
            return tuple(item(v) for v in text)
        return tuple(item(v.strip()) for v in str(text).split(",") if v.strip())
    parse.__name__ = f"list[{item.__name__}]"
    return parse


def _str(text):
    return str(text).strip()


# key -> (default, parser, help)
SCHEMA = {
    "seed": (0, int, "random seed for splits, initialization and shuffling"),
    "data.triples": ("", _str, "triples TSV (head<TAB>relation<TAB>tail)"),
    "data.descriptions": ("", _str, "descriptions TSV (label<TAB>text)"),
    "data.split_dir": ("", _str, "directory with pre-made train.txt/valid.txt/test.txt"),
    "work.dir": ("runs/default", _str, "workspace directory for all artifacts"),
    "split.mode": ("transductive", _str, "transductive or inductive"),
    "split.train": (0.8, float, "train fraction"),
    "split.valid": (0.1, float, "valid fraction"),
    "split.test": (0.1, float, "test fraction"),
    "split.holdout": (None, _optional(float), "fraction of entities held out in inductive mode (default: split.test)"),
    "text.min_freq": (1, int, "minimum word count to enter the vocabulary"),
    "text.max_len": (64, int, "maximum sequence length in tokens"),
    "model.dim": (64, int, "hidden size"),
    "model.layers": (2, int, "transformer blocks"),
    "model.heads": (2, int, "attention heads"),
    "model.ffn": (None, _optional_int, "feed-forward width (default 2 * dim)"),
    "train.expansion.lr": (1.0, float, "learning rate of the entity vocabulary expansion stage"),
    "train.expansion.epochs": (50, int, "epochs of the expansion stage"),
    "train.expansion.batch_size": (None, _optional_int, "batch size of the expansion stage (none: full batch)"),
    "train.mem.lr": (0.2, float, "learning rate of masked entity modeling"),
    "train.mem.epochs": (40, int, "epochs of masked entity modeling"),
    "train.mem.batch_size": (32, _optional_int, "batch size of masked entity modeling (none: full batch)"),
    "train.mem.descriptions": (True, _bool, "fit known entity descriptions during masked entity modeling"),
    "store.sources": (SOURCES, _list_of(_str), "knowledge store sources: descriptions,triples"),
    "store.temperature": (1.0, float, "p_kNN softmax temperature"),
    "store.workers": (1, int, "threads for partitioned nearest-neighbour search"),
    "eval.lambda": (0.2, float, "interpolation weight of p_kNN"),
    "eval.k": (64, int, "neighbours retrieved per query"),
    "eval.filtered": (True, _bool, "filtered ranking"),
    "eval.directions": (DIRECTIONS, _list_of(_str), "query directions: head,tail"),
    "eval.batch_size": (256, int, "queries encoded per batch"),
    "eval.split": ("test", _str, "partition to evaluate: valid or test"),
    "sweep.lambdas": (tuple(i / 10 for i in range(11)), _list_of(float), "lambda grid"),
    "sweep.ks": ((1, 2, 4, 8, 16, 32, 64), _list_of(int), "k grid"),
    "bucket.boundaries": ((0, 5, 20, 50), _list_of(int), "train-frequency bucket lower bounds"),
    "subsample.fractions": ((0.3, 0.5, 0.7, 1.0), _list_of(float), "training fractions"),
    "explain.top_n": (5, int, "entities shown per column"),
}

DEFAULTS = MappingProxyType({key: spec[0] for key, spec in SCHEMA.items()})

ALIASES = {
    "split.mode": "--mode",
    "eval.lambda": "--lambda",
    "eval.k": "--k",
    "store.sources": "--sources",
    "sweep.lambdas": "--lambdas",
    "sweep.ks": "--ks",
    "subsample.fractions": "--fractions",
}


def parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return SCHEMA[key][1](text)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from None


# ================= CONFIG FILE =================

def load_config_file(path):
    """Flat key=value lines; '#' starts a comment."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = parse_value(key, value)
    return values


# ================= RESOLVED CONFIG =================

class RunConfig:
    """
    Immutable, validated mapping of every config key. `explicit` holds the keys
    set by a config file or a flag rather than taken from DEFAULTS.
    """

    def __init__(self, values=None):
        values = dict(values or {})
        merged = dict(DEFAULTS)
        for key, value in values.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
        self._values = MappingProxyType(merged)
        self.explicit = frozenset(values)
        self._validate()

    def __getitem__(self, key):
        return self._values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and dict(self._values) == dict(other._values)

    __hash__ = None

    def with_values(self, **values):
        """Copy with keys given as keyword names, dots spelled as double underscores."""
        updated = {k: self._values[k] for k in self.explicit}
        updated.update({k.replace("__", "."): v for k, v in values.items()})
        return RunConfig(updated)

    def as_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self._values.items())}

    def _validate(self):
        v = self._values
        if v["split.mode"] not in MODES:
            raise ConfigError(f"split.mode must be one of {MODES}, got {v['split.mode']!r}")
        if v["eval.split"] not in ("valid", "test"):
            raise ConfigError(f"eval.split must be valid or test, got {v['eval.split']!r}")
        if not v["store.sources"] or set(v["store.sources"]) - set(SOURCES):
            raise ConfigError(f"store.sources must be a non-empty subset of {SOURCES}")
        if not 0.0 <= v["eval.lambda"] <= 1.0:
            raise ConfigError(f"eval.lambda must lie in [0, 1], got {v['eval.lambda']}")
        for key in ("eval.k", "explain.top_n", "store.workers", "eval.batch_size",
                    "model.dim", "model.layers", "model.heads", "text.max_len", "text.min_freq"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1, got {v[key]}")
        if v["store.temperature"] <= 0:
            raise ConfigError("store.temperature must be positive")
        if any(not 0.0 < f <= 1.0 for f in v["subsample.fractions"]):
            raise ConfigError("subsample.fractions must lie in (0, 1]")

    # ---------------- typed views ----------------

    def split_fractions(self):
        return (self["split.train"], self["split.valid"], self["split.test"])

    def eval_config(self):
        try:
            return EvalConfig(
                lam=self["eval.lambda"],
                k=self["eval.k"],
                filtered=self["eval.filtered"],
                directions=tuple(self["eval.directions"]),
                temperature=self["store.temperature"],
                workers=self["store.workers"],
                batch_size=self["eval.batch_size"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def train_config(self, stage):
        if stage not in (EXPANSION, MEM):
            raise ValueError(f"unknown training stage {stage!r}")
        prefix = f"train.{stage}."
        try:
            return TrainConfig(
                stage=stage,
                lr=self[prefix + "lr"],
                epochs=self[prefix + "epochs"],
                batch_size=self[prefix + "batch_size"],
                seed=self["seed"],
                dim=self["model.dim"],
                layers=self["model.layers"],
                heads=self["model.heads"],
                max_len=self["text.max_len"],
                ffn=self["model.ffn"],
                descriptions=stage == MEM and self["train.mem.descriptions"],
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None


# ================= COMMAND LINE =================

def _describe_default(value):
    if isinstance(value, tuple):
        return ",".join(str(x) for x in value)
    return "none" if value is None else str(value)


def add_config_arguments(parser):
    """One --<key> flag per config key (plus short aliases); unset flags leave no attribute."""
    group = parser.add_argument_group("configuration")
    group.add_argument("--config", metavar="PATH", help="key=value config file")
    for key, (default, parse, text) in SCHEMA.items():
        flags = [f"--{key}"] + ([ALIASES[key]] if key in ALIASES else [])
        group.add_argument(
            *flags, dest=key, default=argparse.SUPPRESS, type=parse, metavar="VALUE",
            help=f"{text} (default: {_describe_default(default)})",
        )


def resolve_config(args):
    values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key in SCHEMA:
        if hasattr(args, key):
            values[key] = getattr(args, key)
    return RunConfig(values)


def add_query_arguments(parser):
    """A single query given by labels: --relation plus exactly one of --head / --tail."""
    parser.add_argument("--relation", required=True, help="relation label")
    slot = parser.add_mutually_exclusive_group(required=True)
    slot.add_argument("--head", help="head label: predict the tail")
    slot.add_argument("--tail", help="tail label: predict the head")
