# workspace.py
# Layout of one run directory and the loaders that rebuild its objects
# Every command reads what earlier commands wrote here; missing inputs name the command to run

import logging
from dataclasses import dataclass
from pathlib import Path

from kge.artifacts import read_json, write_json
from kge.encoder import load_checkpoint
from kge.errors import ConfigError
from kge.graph import DatasetSplit, load_graph
from kge.store import load_store
from kge.text import Vocabulary

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Workspace:
    root: Path

    @classmethod
    def from_config(cls, config):
        return cls(Path(config["work.dir"]))

    # ---------------- paths ----------------

    @property
    def data_dir(self):
        return self.root / "data"

    @property
    def graph_path(self):
        return self.data_dir / "graph.tsv"

    @property
    def descriptions_path(self):
        return self.data_dir / "descriptions.tsv"

    @property
    def split_path(self):
        return self.data_dir / "split.json"

    @property
    def vocab_path(self):
        return self.root / "vocab.txt"

    @property
    def expansion_path(self):
        return self.root / "expansion.ckpt"

    @property
    def model_path(self):
        return self.root / "model.ckpt"

    @property
    def train_log_path(self):
        return self.root / "train_log.json"

    @property
    def store_path(self):
        return self.root / "store.bin"

    @property
    def store_info_path(self):
        return self.root / "store.json"

    @property
    def reports_dir(self):
        return self.root / "reports"

    def report(self, name):
        return self.reports_dir / name

    # ---------------- loaders ----------------

    def _require(self, path, command):
        if not path.exists():
            raise ConfigError(f"{path} not found; run `{command}` first")
        return path

    def load_graph(self):
        self._require(self.graph_path, "ingest")
        return load_graph(self.graph_path, self.descriptions_path)

    def load_split(self, graph=None):
        self._require(self.split_path, "ingest")
        graph = graph or self.load_graph()
        return DatasetSplit.from_json(graph, read_json(self.split_path)["split"])

    def save_split(self, split, config):
        return write_json(self.split_path, {"config": config.as_dict(), "split": split.to_json()})

    def load_vocabulary(self, config):
        self._require(self.vocab_path, "train")
        return Vocabulary.load(self.vocab_path, max_len=config["text.max_len"])

    def load_model(self, config, path=None):
        path = self._require(path or self.model_path, "train")
        model = load_checkpoint(path, self.load_vocabulary(config))
        logger.info("loaded %s (stage %s, dim %d)", path, model.stage, model.dim)
        return model

    def load_store(self):
        self._require(self.store_path, "build-store")
        return load_store(self.store_path)

    def load_eval_inputs(self, config, need_store=True):
        """(split, model, store or None, triples of the evaluated partition)."""
        split = self.load_split()
        model = self.load_model(config)
        store = self.load_store() if need_store else None
        triples = split.test if config["eval.split"] == "test" else split.valid
        return split, model, store, triples
