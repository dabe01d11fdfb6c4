# dump_embeddings_command.py
# Write a query's anchor vector and its nearest distinct store entities for external projection

from kge.artifacts import atomic_write_text
from kge.config import add_query_arguments
from kge.evaluation import anchor_for, resolve_query
from kge.store import nearest_entities
from kge.workspace import Workspace

COLUMNS = ("row", "entity", "distance", "provenance", "index", "vector")


def _vector(v):
    return " ".join(repr(float(x)) for x in v)


class DumpEmbeddingsCommand:
    name = "dump-embeddings"
    help = "dump the anchor vector and its k nearest neighbour keys as TSV"

    def add_arguments(self, parser):
        add_query_arguments(parser)
        parser.add_argument("--out", metavar="PATH", help="output TSV (default: reports/embeddings.tsv)")

    def run(self, args, config):
        ws = Workspace.from_config(config)
        graph = ws.load_graph()
        model = ws.load_model(config)
        store = ws.load_store()
        direction, entity, relation = resolve_query(graph, args.relation, args.head, args.tail)

        anchor = anchor_for(model, graph, direction, entity, relation)
        hits = nearest_entities(store, anchor, config["eval.k"], config["store.workers"])

        lines = ["#" + "\t".join(COLUMNS)]
        lines.append("\t".join(("anchor", "?", repr(0.0), "-", "-", _vector(anchor))))
        for h in hits:
            entry = store.entry(h.index)
            lines.append("\t".join((
                "neighbor", graph.entity_label(h.entity), repr(h.distance),
                entry.provenance, str(h.index), _vector(entry.key),
            )))
        out = args.out or ws.report("embeddings.tsv")
        atomic_write_text(out, "\n".join(lines) + "\n")
        print(f"{len(hits)} neighbours of the {direction} query -> {out}")
