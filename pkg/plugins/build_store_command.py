# build_store_command.py
# Encode descriptions and training triples into the kNN knowledge store

import logging
import time

from kge.artifacts import write_json
from kge.store import build_store, save_store
from kge.workspace import Workspace

logger = logging.getLogger(__name__)


class BuildStoreCommand:
    name = "build-store"
    help = "build the knowledge store from descriptions and training triples"

    def add_arguments(self, parser):
        parser.add_argument("--text", metavar="PATH", help="also write a text debug copy of the store")

    def run(self, args, config):
        ws = Workspace.from_config(config)
        split = ws.load_split()
        model = ws.load_model(config)

        started = time.perf_counter()
        store = build_store(model, split, tuple(config["store.sources"]))
        logger.info("store built in %.2fs", time.perf_counter() - started)

        save_store(store, ws.store_path)
        if args.text:
            save_store(store, args.text, text=True)

        counts = store.counts_by_provenance()
        covered = store.distinct_entities()
        known = set(split.train_entities())
        stats = {
            "entries": len(store),
            "by_provenance": counts,
            "distinct_entities": len(covered),
            "store_only_entities": len(covered - known),
            "dim": store.dim,
        }
        write_json(ws.store_info_path, {"config": config.as_dict(), "seed": config["seed"], "store": stats})

        print(f"{counts['description']} description entries, {counts['triple']} triple entries")
        print(f"{len(covered)} distinct entities, {stats['store_only_entities']} reachable only through the store")
