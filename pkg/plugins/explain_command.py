# explain_command.py
# Show how the store reorders the MEM head's answer for one query

from kge.artifacts import render_table, report_record, write_report
from kge.config import add_query_arguments
from kge.evaluation import explain_from_labels
from kge.workspace import Workspace


class ExplainCommand:
    name = "explain"
    help = "top entities under p_MEM, p_kNN and their interpolation for one query"

    def add_arguments(self, parser):
        add_query_arguments(parser)
        parser.add_argument("--gold", help="expected answer label, ranked in both distributions")

    def run(self, args, config):
        ws = Workspace.from_config(config)
        split, model, store, _ = ws.load_eval_inputs(config)
        explanation = explain_from_labels(
            model, store, split.graph, config.eval_config(), args.relation,
            head=args.head, tail=args.tail, top_n=config["explain.top_n"], gold=args.gold,
        )
        record = report_record("explain", config, explanation=explanation)

        parts = []
        for column in ("mem", "knn", "interpolated"):
            parts.append(f"{column}\n" + render_table(explanation[column], ("entity", "p")))
        parts.append("neighbors\n" + render_table(
            explanation["neighbors"], ("index", "entity", "distance", "provenance", "slot", "source"),
        ))
        text = "\n".join(parts)
        write_report(ws, "explain", record, text)
        print(text, end="")
