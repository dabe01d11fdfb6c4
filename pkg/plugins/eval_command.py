# eval_command.py
# Link-prediction evaluation with and without the knowledge store

from kge.artifacts import METRIC_COLUMNS, render_table, report_record, write_report
from kge.evaluation import comparison_rows, evaluate
from kge.workspace import Workspace


class EvalCommand:
    name = "eval"
    help = "rank every test query and report Hits@1/3/10, MR and MRR"

    def add_arguments(self, parser):
        parser.add_argument(
            "--no-store", action="store_true",
            help="evaluate the MEM head alone (same as --lambda 0)",
        )

    def run(self, args, config):
        if args.no_store:
            config = config.with_values(eval__lambda=0.0)
        ws = Workspace.from_config(config)
        split, model, store, triples = ws.load_eval_inputs(config, need_store=config["eval.lambda"] > 0)

        result, baseline = evaluate(model, store, split, config.eval_config(), triples)
        record = report_record(
            "eval", config,
            split=split.summary(),
            with_store=result.to_json(split.graph),
            without_store=baseline.to_json(split.graph),
        )
        table = render_table(comparison_rows(result, baseline), ("setting", "direction") + METRIC_COLUMNS)
        write_report(ws, "eval", record, table)
        print(table, end="")
