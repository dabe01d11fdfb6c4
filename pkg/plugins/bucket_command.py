# bucket_command.py
# Metrics per train-frequency bucket of the gold entity (long-tail analysis)

from kge.artifacts import render_table, report_record, write_report
from kge.evaluation import bucket_report, evaluate
from kge.graph import entity_frequency
from kge.plots import plot_bucket_bars, plot_frequency_histogram
from kge.workspace import Workspace


class BucketCommand:
    name = "bucket"
    help = "break metrics down by how often the answer entity occurs in training"

    def run(self, args, config):
        ws = Workspace.from_config(config)
        split, model, store, triples = ws.load_eval_inputs(config, need_store=config["eval.lambda"] > 0)
        table = entity_frequency(split, config["bucket.boundaries"])

        result, baseline = evaluate(model, store, split, config.eval_config(), triples)
        rows = [
            {"bucket": w["bucket"], "count": w["count"], "with_store": w["metrics"], "without_store": wo["metrics"]}
            for w, wo in zip(bucket_report(result, table), bucket_report(baseline, table))
        ]
        record = report_record(
            "bucket", config,
            split=split.summary(),
            frequency=table.to_json(),
            share_below={str(t): table.share_below(t) for t in (20, 50)},
            buckets=rows,
        )

        flat = []
        for r in rows:
            for setting in ("with_store", "without_store"):
                m = r[setting] or {}
                flat.append({"bucket": r["bucket"], "setting": setting.replace("_", " "), "count": r["count"],
                             "hits1": m.get("hits1"), "hits10": m.get("hits10"), "mrr": m.get("mrr")})
        text = render_table(flat, ("bucket", "setting", "count", "hits1", "hits10", "mrr"))
        write_report(ws, "bucket", record, text)
        plot_frequency_histogram(table, ws.report("frequency.png"))
        plot_bucket_bars(rows, ws.report("bucket.png"))
        print(text, end="")
        print(f"{table.share_below(50):.1%} of entities occur in fewer than 50 train triples")
