# train_command.py
# Two-stage training: entity vocabulary expansion, then masked entity modeling

import logging

from kge.artifacts import write_json
from kge.encoder import EXPANSION, MEM, load_checkpoint, new_model, save_checkpoint, train_expansion, train_mem
from kge.errors import ConfigError
from kge.plots import plot_training_log
from kge.text import build_vocabulary, expand_entity_vocabulary
from kge.workspace import Workspace

logger = logging.getLogger(__name__)


def _fresh_vocabulary(ws, split, config):
    vocab = build_vocabulary(split.graph, config["text.min_freq"], config["text.max_len"])
    vocab = expand_entity_vocabulary(vocab, split.graph.entities)
    vocab.save(ws.vocab_path)
    return vocab


class TrainCommand:
    name = "train"
    help = "train the encoder (expansion stage, then masked entity modeling)"

    def add_arguments(self, parser):
        parser.add_argument(
            "--stage", choices=("all", EXPANSION, MEM), default="all",
            help="run both stages, or only one of them",
        )
        parser.add_argument(
            "--skip-expansion", action="store_true",
            help="allow the mem stage to start from a model that never ran expansion",
        )

    def run(self, args, config):
        ws = Workspace.from_config(config)
        split = ws.load_split()
        exp_cfg = config.train_config(EXPANSION)
        mem_cfg = config.train_config(MEM)
        log = []

        if args.stage in ("all", EXPANSION):
            model = new_model(_fresh_vocabulary(ws, split, config), split, exp_cfg)
            if args.skip_expansion:
                logger.warning("expansion stage skipped on request")
            else:
                train_expansion(model, split.graph, exp_cfg, log)
                save_checkpoint(model, ws.expansion_path)
                print(f"expansion stage: {exp_cfg.epochs} epochs -> {ws.expansion_path}")
        elif ws.expansion_path.exists():
            model = load_checkpoint(ws.expansion_path, ws.load_vocabulary(config))
            model.set_known_entities(split.known_entity_mask())
        elif args.skip_expansion:
            vocab = ws.load_vocabulary(config) if ws.vocab_path.exists() else _fresh_vocabulary(ws, split, config)
            model = new_model(vocab, split, exp_cfg)
        else:
            raise ConfigError(
                f"{ws.expansion_path} not found; run `train --stage expansion` first "
                "or pass --skip-expansion"
            )

        if args.stage in ("all", MEM):
            train_mem(model, split, mem_cfg, log, require_expansion=not args.skip_expansion)
            save_checkpoint(model, ws.model_path)
            print(f"mem stage: {mem_cfg.epochs} epochs -> {ws.model_path}")

        write_json(ws.train_log_path, {"config": config.as_dict(), "seed": config["seed"], "log": log})
        if log:
            plot_training_log(log, ws.report("train_loss.png"))
            last = {row["stage"]: row["loss"] for row in log}
            print("final loss: " + ", ".join(f"{stage} {loss:.6f}" for stage, loss in last.items()))
