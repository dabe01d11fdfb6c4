# ingest_command.py
# Load triples + descriptions (or a pre-made split), split them, and persist both to the workspace

import logging

from kge.errors import ConfigError
from kge.graph import entity_frequency, load_graph, load_split_files, make_split, write_graph
from kge.workspace import Workspace

logger = logging.getLogger(__name__)


class IngestCommand:
    name = "ingest"
    help = "parse the graph files and write the seeded train/valid/test split"

    def run(self, args, config):
        ws = Workspace.from_config(config)
        descriptions = config["data.descriptions"]
        if not descriptions:
            raise ConfigError("--data.descriptions is required")

        if config["data.split_dir"]:
            # pre-made split: the mode is inferred unless a flag or the config file sets it
            mode = config["split.mode"] if "split.mode" in config.explicit else None
            split = load_split_files(config["data.split_dir"], descriptions, mode=mode)
        else:
            if not config["data.triples"]:
                raise ConfigError("--data.triples or --data.split_dir is required")
            graph = load_graph(config["data.triples"], descriptions)
            split = make_split(
                graph,
                fractions=config.split_fractions(),
                mode=config["split.mode"],
                seed=config["seed"],
                holdout=config["split.holdout"],
            )

        graph = split.graph
        write_graph(graph, ws.graph_path, ws.descriptions_path)
        ws.save_split(split, config)

        s = graph.summary()
        print(f"{s['entities']} entities, {s['relations']} relations, {s['triples']} triples")
        for key, count in s["warnings"].items():
            if count:
                print(f"  warning: {count} {key.replace('_', ' ')}")
        p = split.summary()
        print(f"{p['mode']} split: train {p['train']}, valid {p['valid']}, test {p['test']}, "
              f"unseen entities {p['unseen_entities']}")
        table = entity_frequency(split)
        print(f"long tail: {table.share_below(50):.1%} of entities occur in fewer than 50 train triples")
        logger.info("workspace %s", ws.root)
