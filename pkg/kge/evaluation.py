# evaluation.py
# Interpolation of p_MEM with p_kNN, filtered ranking, and the link-prediction metrics
# Queries are processed in chunks: encode, score with the MEM head, retrieve once at the
# widest k, then rank every requested (lambda, k) cell from the same neighbours

import logging
import math
from dataclasses import dataclass

import numpy as np

from kge.encoder import encode_batch, mem_distributions
from kge.errors import ConfigError
from kge.graph import Triple
from kge.store import dedupe_per_entity, knn_distribution, knn_search, sparse_to_dense
from kge.text import head_query_for, tail_query_for

logger = logging.getLogger(__name__)

HEAD, TAIL = "head", "tail"
DIRECTIONS = (HEAD, TAIL)
HITS_AT = (1, 3, 10)


# ============================ TYPES ============================

@dataclass(frozen=True)
class EvalConfig:
    lam: float = 0.2
    k: int = 64
    filtered: bool = True
    directions: tuple = DIRECTIONS
    temperature: float = 1.0
    workers: int = 1
    batch_size: int = 256

    def __post_init__(self):
        check_lambda(self.lam)
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.directions or set(self.directions) - set(DIRECTIONS):
            raise ValueError(f"directions must be a non-empty subset of {DIRECTIONS}, got {self.directions}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.workers < 1 or self.batch_size < 1:
            raise ValueError("workers and batch_size must be >= 1")


def check_lambda(lam):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


@dataclass(frozen=True)
class InterpolatedDistribution:
    probs: np.ndarray
    p_mem: np.ndarray
    p_knn: dict
    lam: float

    def top(self, n):
        return top_entities(self.probs, n)


@dataclass(frozen=True)
class RankingResult:
    query: Triple
    direction: str
    gold: int
    rank: float
    filtered: bool


@dataclass(frozen=True)
class MetricsReport:
    hits1: float
    hits3: float
    hits10: float
    mr: float
    mrr: float
    count: int

    @classmethod
    def from_ranks(cls, ranks):
        """Means over query instances; None for an empty instance set."""
        ranks = list(ranks)
        if not ranks:
            return None
        n = len(ranks)
        hits = [math.fsum(1.0 for r in ranks if r <= k) / n for k in HITS_AT]
        return cls(
            hits1=hits[0],
            hits3=hits[1],
            hits10=hits[2],
            mr=math.fsum(ranks) / n,
            mrr=math.fsum(1.0 / r for r in ranks) / n,
            count=n,
        )

    def as_dict(self):
        return {
            "hits1": self.hits1, "hits3": self.hits3, "hits10": self.hits10,
            "mr": self.mr, "mrr": self.mrr, "count": self.count,
        }


def _as_dict(metrics):
    return None if metrics is None else metrics.as_dict()


@dataclass(frozen=True)
class EvaluationResult:
    lam: float
    k: int
    rankings: tuple

    def metrics(self, keep=None):
        return MetricsReport.from_ranks(r.rank for r in self.rankings if keep is None or keep(r))

    def by_direction(self):
        directions = sorted({r.direction for r in self.rankings})
        return {d: self.metrics(lambda r, d=d: r.direction == d) for d in directions}

    def by_relation(self, graph):
        relations = sorted({r.query.relation for r in self.rankings})
        return {
            graph.relation_label(rel): self.metrics(lambda r, rel=rel: r.query.relation == rel)
            for rel in relations
        }

    def to_json(self, graph):
        return {
            "lambda": self.lam,
            "k": self.k,
            "all": _as_dict(self.metrics()),
            "by_direction": {d: _as_dict(m) for d, m in self.by_direction().items()},
            "by_relation": {rel: _as_dict(m) for rel, m in self.by_relation(graph).items()},
        }


# ============================ DISTRIBUTIONS ============================

def interpolate(p_knn, p_mem, lam):
    """p(e) = lam * p_kNN(e) + (1 - lam) * p_MEM(e); p_kNN is zero off its support."""
    check_lambda(lam)
    p_mem = np.asarray(p_mem, dtype=np.float64)
    if not p_knn and lam > 0:
        raise ValueError("p_kNN is empty but lambda > 0")
    for e in p_knn:
        if not 0 <= e < p_mem.shape[0]:
            raise ValueError(f"p_kNN entity {e} outside the {p_mem.shape[0]} candidates")
    dense = sparse_to_dense(p_knn, p_mem.shape[0])
    probs = lam * dense + (1.0 - lam) * p_mem
    return InterpolatedDistribution(probs=probs, p_mem=p_mem, p_knn=dict(p_knn), lam=lam)


def top_entities(probs, n):
    """[(entity, p)] of the n most probable entities; ties by ascending id."""
    probs = np.asarray(probs)
    order = np.lexsort((np.arange(probs.shape[0]), -probs))[:n]
    return [(int(e), float(probs[e])) for e in order]


def rank_entities(dist, gold, filter_out=(), query=None, direction=TAIL, filtered=None):
    """
    Average-over-ties rank of `gold` among all entities minus `filter_out`:
    1 + #{p(e) > p(gold)} + #{e != gold, p(e) == p(gold)} / 2.
    """
    probs = np.asarray(getattr(dist, "probs", dist))
    filter_out = set(filter_out)
    if gold in filter_out:
        raise ValueError(f"gold entity {gold} is in the filter set")
    candidates = np.ones(probs.shape[0], dtype=bool)
    if filter_out:
        candidates[list(filter_out)] = False
    scores = probs[candidates]
    p_gold = probs[gold]
    higher = int(np.count_nonzero(scores > p_gold))
    ties = int(np.count_nonzero(scores == p_gold)) - 1
    return RankingResult(
        query=query, direction=direction, gold=int(gold),
        rank=1.0 + higher + ties / 2.0,
        filtered=bool(filter_out) if filtered is None else filtered,
    )


# ============================ QUERIES ============================

def query_sequence(vocab, graph, triple, direction):
    if direction == TAIL:
        return tail_query_for(vocab, graph, triple.head, triple.relation, target=triple.tail)
    return head_query_for(vocab, graph, triple.relation, triple.tail, target=triple.head)


def gold_of(triple, direction):
    return triple.tail if direction == TAIL else triple.head


def filter_set(answers, triple, direction, filtered):
    if not filtered:
        return set()
    key = ("tail", triple.head, triple.relation) if direction == TAIL else ("head", triple.relation, triple.tail)
    return answers.get(key, set()) - {gold_of(triple, direction)}


def _check_inputs(model, store, cells):
    if any(lam > 0 for lam, _ in cells):
        if store is None:
            raise ConfigError("lambda > 0 needs a knowledge store")
        if len(store) == 0:
            raise ConfigError("knowledge store is empty")
    if store is not None and store.dim != model.dim:
        raise ConfigError(f"store dim {store.dim} does not match model dim {model.dim}")


def _rank_cells(model, store, split, triples, cells, config, answers=None):
    """Rankings for every (lambda, k) cell over every (triple, direction) instance, in order."""
    _check_inputs(model, store, cells)
    graph = split.graph
    if answers is None:
        answers = split.answer_index() if config.filtered else {}
    instances = [(t, d) for t in triples for d in config.directions]
    widest = max((k for lam, k in cells if lam > 0), default=0)
    out = {cell: [] for cell in cells}

    for start in range(0, len(instances), config.batch_size):
        chunk = instances[start:start + config.batch_size]
        seqs = [query_sequence(model.vocab, graph, t, d) for t, d in chunk]
        anchors = encode_batch(model, seqs, config.batch_size)
        p_mem = mem_distributions(model, anchors)

        for i, (t, d) in enumerate(chunk):
            gold = gold_of(t, d)
            excluded = filter_set(answers, t, d, config.filtered)
            hits = knn_search(store, anchors[i], widest, config.workers) if widest else []
            for lam, k in cells:
                p_knn = knn_distribution(dedupe_per_entity(hits[:k]), config.temperature) if lam > 0 else {}
                dist = interpolate(p_knn, p_mem[i], lam)
                out[(lam, k)].append(
                    rank_entities(dist, gold, excluded, query=t, direction=d, filtered=config.filtered)
                )

    return {cell: tuple(r) for cell, r in out.items()}


def evaluate(model, store, split, config, triples=None, answers=None):
    """
    Rank every enabled direction of every triple (test by default) under the
    interpolated distribution. Returns (result, without_store) where the second
    result ranks under p_MEM alone. `answers` overrides the filter index
    (e.g. the full split's when `split` is a training subsample).
    """
    triples = split.test if triples is None else tuple(triples)
    if not triples:
        raise ValueError("no triples to evaluate")
    cells = [(config.lam, config.k), (0.0, config.k)]
    cells = list(dict.fromkeys(cells))
    ranked = _rank_cells(model, store, split, triples, cells, config, answers)
    logger.info("evaluated %d query instances (lambda=%s, k=%d)",
                len(ranked[cells[0]]), config.lam, config.k)
    return (
        EvaluationResult(config.lam, config.k, ranked[(config.lam, config.k)]),
        EvaluationResult(0.0, config.k, ranked[(0.0, config.k)]),
    )


def sweep(model, store, split, lambdas, ks, config, triples=None):
    """One evaluation per (lambda, k) cell, lambda-major; neighbours are retrieved once at max(ks)."""
    if not lambdas or not ks:
        raise ValueError("sweep grids must not be empty")
    for lam in lambdas:
        check_lambda(lam)
    if any(k < 1 for k in ks):
        raise ValueError(f"every k must be >= 1, got {list(ks)}")
    triples = split.test if triples is None else tuple(triples)
    if not triples:
        raise ValueError("no triples to evaluate")
    cells = list(dict.fromkeys((float(lam), int(k)) for lam in lambdas for k in ks))
    ranked = _rank_cells(model, store, split, triples, cells, config)
    return [EvaluationResult(lam, k, ranked[(lam, k)]) for lam, k in cells]


# ============================ REPORTS ============================

def bucket_report(result, table):
    """
    Assign each query instance to the frequency bucket of its gold entity.
    Empty buckets carry metrics None; counts partition the instance set.
    """
    labels = table.bucket_labels()
    groups = [[] for _ in labels]
    for r in result.rankings:
        groups[table.bucket_of(r.gold)].append(r.rank)
    return [
        {"bucket": label, "count": len(ranks), "metrics": _as_dict(MetricsReport.from_ranks(ranks))}
        for label, ranks in zip(labels, groups)
    ]


def _neighbor_record(graph, store, hit):
    entry = store.entry(hit.index)
    if entry.provenance == "triple":
        source = "\t".join(graph.triple_labels(graph.triples[entry.source]))
    else:
        source = graph.entity_label(entry.source)
    return {
        "index": hit.index,
        "entity": graph.entity_label(hit.entity),
        "distance": hit.distance,
        "provenance": entry.provenance,
        "slot": entry.slot,
        "source": source,
    }


def explain_query(model, store, graph, direction, entity, relation, config, top_n=5, gold=None):
    """
    Top-n entities under p_MEM, p_kNN and the interpolation, with every
    retrieved neighbour and its provenance. `entity` is the known slot:
    the head for a tail query, the tail for a head query.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    if top_n < 1:
        raise ValueError(f"top_n must be >= 1, got {top_n}")
    _check_inputs(model, store, [(config.lam, config.k)])

    if direction == TAIL:
        shown = {"head": graph.entity_label(entity), "relation": graph.relation_label(relation), "tail": "?"}
    else:
        shown = {"head": "?", "relation": graph.relation_label(relation), "tail": graph.entity_label(entity)}

    anchor = anchor_for(model, graph, direction, entity, relation)
    p_mem = mem_distributions(model, anchor)[0]
    hits = knn_search(store, anchor, config.k, config.workers) if store is not None and len(store) else []
    p_knn = knn_distribution(dedupe_per_entity(hits), config.temperature) if hits else {}
    dist = interpolate(p_knn if config.lam > 0 else {}, p_mem, config.lam)
    knn_dense = sparse_to_dense(p_knn, graph.num_entities)

    def column(probs):
        return [{"entity": graph.entity_label(e), "p": p} for e, p in top_entities(probs, top_n)]

    record = {
        "query": dict(shown, direction=direction),
        "lambda": config.lam,
        "k": config.k,
        "mem": column(p_mem),
        "knn": column(knn_dense) if p_knn else [],
        "interpolated": [
            {
                "entity": graph.entity_label(e),
                "p": p,
                "p_mem": float(p_mem[e]),
                "p_knn": float(p_knn.get(e, 0.0)),
            }
            for e, p in dist.top(top_n)
        ],
        "neighbors": [_neighbor_record(graph, store, h) for h in hits],
    }
    if gold is not None:
        record["gold"] = {
            "entity": graph.entity_label(gold),
            "rank_interpolated": rank_entities(dist, gold).rank,
            "rank_mem": rank_entities(p_mem, gold).rank,
        }
    return record


def resolve_query(graph, relation, head=None, tail=None):
    """(direction, known entity id, relation id) for (head, relation, ?) or (?, relation, tail) labels."""
    if (head is None) == (tail is None):
        raise ValueError("give exactly one of head or tail")
    rel = graph.relation_id(relation)
    if head is not None:
        return TAIL, graph.entity_id(head), rel
    return HEAD, graph.entity_id(tail), rel


def explain_from_labels(model, store, graph, config, relation, head=None, tail=None, top_n=5, gold=None):
    direction, entity, rel = resolve_query(graph, relation, head, tail)
    gold_id = None if gold is None else graph.entity_id(gold)
    return explain_query(model, store, graph, direction, entity, rel, config, top_n, gold_id)


def anchor_for(model, graph, direction, entity, relation):
    if direction == TAIL:
        return encode_batch(model, [tail_query_for(model.vocab, graph, entity, relation)])[0]
    return encode_batch(model, [head_query_for(model.vocab, graph, relation, entity)])[0]


def comparison_rows(result, baseline):
    """Table rows: aggregate and per-direction metrics, with and without the store."""
    rows = []
    for setting, res in (("with store", result), ("without store", baseline)):
        for direction, m in [("all", res.metrics())] + sorted(res.by_direction().items()):
            rows.append({"setting": setting, "direction": direction, **(_as_dict(m) or {})})
    return rows

