# subsample_eval_command.py
# Low-resource curve: retrain from scratch on a fraction of the training triples, rebuild the
# store from that fraction, and evaluate with and without it

import logging

from kge.artifacts import render_table, report_record, write_report
from kge.encoder import EXPANSION, MEM, fit_model
from kge.evaluation import evaluate
from kge.graph import subsample_training
from kge.plots import plot_subsample
from kge.store import build_store
from kge.text import build_vocabulary, expand_entity_vocabulary
from kge.workspace import Workspace

logger = logging.getLogger(__name__)


class SubsampleEvalCommand:
    name = "subsample-eval"
    help = "retrain and evaluate on growing fractions of the training triples"

    def run(self, args, config):
        ws = Workspace.from_config(config)
        split = ws.load_split()
        graph = split.graph
        vocab = expand_entity_vocabulary(
            build_vocabulary(graph, config["text.min_freq"], config["text.max_len"]), graph.entities,
        )
        eval_cfg = config.eval_config()
        sources = tuple(config["store.sources"])
        answers = split.answer_index()

        rows = []
        for fraction in config["subsample.fractions"]:
            sub = subsample_training(split, fraction, config["seed"])
            logger.info("fraction %.2f: %d training triples", fraction, len(sub.train))
            model = fit_model(vocab, sub, config.train_config(EXPANSION), config.train_config(MEM))
            store = build_store(model, sub, sources) if eval_cfg.lam > 0 else None
            triples = sub.test if config["eval.split"] == "test" else sub.valid
            result, baseline = evaluate(model, store, sub, eval_cfg, triples, answers)
            rows.append({
                "fraction": fraction,
                "train": len(sub.train),
                "with_store": result.to_json(graph),
                "without_store": baseline.to_json(graph),
            })

        record = report_record("subsample-eval", config, split=split.summary(), fractions=rows)
        flat = [
            {"fraction": r["fraction"], "train": r["train"],
             "mrr with store": (r["with_store"]["all"] or {}).get("mrr"),
             "mrr without store": (r["without_store"]["all"] or {}).get("mrr")}
            for r in rows
        ]
        text = render_table(flat, ("fraction", "train", "mrr with store", "mrr without store"))
        write_report(ws, "subsample", record, text)
        plot_subsample(rows, ws.report("subsample.png"))
        print(text, end="")
