# toy_command.py
# Write the bundled synthetic knowledge graph as triples + descriptions TSV files

from pathlib import Path

from kge.graph import write_graph
from kge.toy import make_toy_graph


class MakeToyCommand:
    name = "make-toy"
    help = "generate the seeded synthetic knowledge graph"

    def add_arguments(self, parser):
        parser.add_argument("--out", default="data/toy", help="output directory")
        parser.add_argument("--entities", type=int, default=200)
        parser.add_argument("--triples", type=int, default=1200)

    def run(self, args, config):
        out = Path(args.out)
        graph = make_toy_graph(args.entities, args.triples, config["seed"])
        write_graph(graph, out / "triples.tsv", out / "descriptions.tsv")
        s = graph.summary()
        print(f"{s['entities']} entities, {s['relations']} relations, {s['triples']} triples -> {out}")
