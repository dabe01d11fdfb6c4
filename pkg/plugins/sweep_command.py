# sweep_command.py
# Grid over interpolation weight and neighbour count

from kge.artifacts import METRIC_COLUMNS, render_table, report_record, write_report
from kge.evaluation import sweep
from kge.plots import plot_sweep
from kge.workspace import Workspace


class SweepCommand:
    name = "sweep"
    help = "evaluate every (lambda, k) cell of the sweep grid"

    def run(self, args, config):
        ws = Workspace.from_config(config)
        lambdas, ks = config["sweep.lambdas"], config["sweep.ks"]
        split, model, store, triples = ws.load_eval_inputs(config, need_store=any(lam > 0 for lam in lambdas))

        results = sweep(model, store, split, lambdas, ks, config.eval_config(), triples)
        cells = [r.to_json(split.graph) for r in results]
        record = report_record("sweep", config, split=split.summary(), cells=cells)

        rows = [{"lambda": c["lambda"], "k": c["k"], **(c["all"] or {})} for c in cells]
        table = render_table(rows, ("lambda", "k") + METRIC_COLUMNS)
        write_report(ws, "sweep", record, table)
        plot_sweep(cells, ws.report("sweep_by_k.png"), ws.report("sweep_by_lambda.png"))
        print(table, end="")
        print(f"{len(cells)} cells ({len(lambdas)} lambdas x {len(ks)} ks)")
