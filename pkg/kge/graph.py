# graph.py
# Knowledge graph loading, validation, splitting and frequency profiling
# A graph is the tuple (entities, relations, triples, descriptions); all tables are immutable

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from kge.artifacts import atomic_write_text
from kge.errors import (
    DescriptionConflictError,
    EmptyGraphError,
    GraphParseError,
    InfeasibleSplitError,
    SplitError,
    UnknownLabelError,
)

logger = logging.getLogger(__name__)

TRANSDUCTIVE = "transductive"
INDUCTIVE = "inductive"
MODES = (TRANSDUCTIVE, INDUCTIVE)

SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")


@dataclass(frozen=True)
class Entity:
    id: int
    label: str


@dataclass(frozen=True)
class Relation:
    id: int
    label: str


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


# ============================ GRAPH ============================

@dataclass(frozen=True)
class KnowledgeGraph:
    entities: tuple
    relations: tuple
    triples: tuple
    descriptions: tuple
    warnings: dict = field(default_factory=dict, compare=False)

    _entity_index: dict = field(init=False, repr=False, compare=False)
    _relation_index: dict = field(init=False, repr=False, compare=False)
    _triple_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.triples:
            raise EmptyGraphError("empty graph")

        entity_index = _index_table(self.entities, "entity")
        relation_index = _index_table(self.relations, "relation")

        if len(self.descriptions) != len(self.entities):
            raise ValueError(
                f"{len(self.descriptions)} descriptions for {len(self.entities)} entities"
            )

        triple_index = {}
        n_ent, n_rel = len(self.entities), len(self.relations)
        for i, t in enumerate(self.triples):
            if not (0 <= t.head < n_ent and 0 <= t.tail < n_ent and 0 <= t.relation < n_rel):
                raise ValueError(f"triple {i} does not resolve within the graph: {t}")
            if t in triple_index:
                raise ValueError(f"duplicate triple {t}")
            triple_index[t] = i

        object.__setattr__(self, "_entity_index", entity_index)
        object.__setattr__(self, "_relation_index", relation_index)
        object.__setattr__(self, "_triple_index", triple_index)

    @property
    def num_entities(self):
        return len(self.entities)

    @property
    def num_relations(self):
        return len(self.relations)

    def entity_id(self, label):
        try:
            return self._entity_index[label]
        except KeyError:
            raise UnknownLabelError(f"unknown entity {label!r}") from None

    def relation_id(self, label):
        try:
            return self._relation_index[label]
        except KeyError:
            raise UnknownLabelError(f"unknown relation {label!r}") from None

    def entity_label(self, entity_id):
        return self.entities[entity_id].label

    def relation_label(self, relation_id):
        return self.relations[relation_id].label

    def description(self, entity_id):
        return self.descriptions[entity_id]

    def triple_position(self, triple):
        return self._triple_index[triple]

    def triple_labels(self, triple):
        return (
            self.entity_label(triple.head),
            self.relation_label(triple.relation),
            self.entity_label(triple.tail),
        )

    def summary(self):
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "triples": len(self.triples),
            "warnings": dict(sorted(self.warnings.items())),
        }


def _index_table(table, kind):
    index = {}
    for expected, item in enumerate(table):
        if item.id != expected:
            raise ValueError(f"{kind} ids must be contiguous; got {item.id} at {expected}")
        if not item.label:
            raise ValueError(f"{kind} {item.id} has an empty label")
        if item.label in index:
            raise ValueError(f"duplicate {kind} label {item.label!r}")
        index[item.label] = item.id
    return index


def build_graph(labeled_triples, descriptions=None):
    """
    Assemble a KnowledgeGraph from (head, relation, tail) label rows and a
    label -> description mapping.

    Ids are assigned in first-appearance order (head before tail within a row).
    Entities only present in `descriptions` are appended after all triple
    entities, in mapping order. Duplicate rows collapse to one triple.
    """
    descriptions = descriptions or {}
    entity_ids, relation_ids = {}, {}
    triples, seen = [], set()
    duplicates = 0

    def _intern(table, label):
        if label not in table:
            table[label] = len(table)
        return table[label]

    for head, rel, tail in labeled_triples:
        t = Triple(_intern(entity_ids, head), _intern(relation_ids, rel), _intern(entity_ids, tail))
        if t in seen:
            duplicates += 1
            continue
        seen.add(t)
        triples.append(t)

    if not triples:
        raise EmptyGraphError("empty graph")

    for label in descriptions:
        _intern(entity_ids, label)

    texts = [""] * len(entity_ids)
    missing = 0
    for label, eid in entity_ids.items():
        if label in descriptions:
            texts[eid] = descriptions[label]
        else:
            missing += 1

    warnings = {"duplicate_triples": duplicates, "missing_descriptions": missing}
    if duplicates:
        logger.warning("collapsed %d duplicate triple(s)", duplicates)
    if missing:
        logger.warning("%d entit(y/ies) without a description row; using empty text", missing)

    return KnowledgeGraph(
        entities=tuple(Entity(i, label) for label, i in entity_ids.items()),
        relations=tuple(Relation(i, label) for label, i in relation_ids.items()),
        triples=tuple(triples),
        descriptions=tuple(texts),
        warnings=warnings,
    )


# ============================ FILE FORMATS ============================

def _read_rows(path, columns):
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != columns:
                raise GraphParseError(
                    path, line_no,
                    f"expected {columns} tab-separated columns, got {len(parts)}"
                )
            if not parts[0] or (columns == 3 and not (parts[1] and parts[2])):
                raise GraphParseError(path, line_no, "empty label")
            rows.append((line_no, parts))
    return rows


def read_triples(path):
    return [tuple(parts) for _, parts in _read_rows(path, 3)]


def read_descriptions(path):
    descriptions = {}
    for line_no, (label, text) in _read_rows(path, 2):
        if label in descriptions:
            raise DescriptionConflictError(
                f"{path}:{line_no}: duplicate description for entity {label!r}"
            )
        descriptions[label] = text
    return descriptions


def load_graph(triples_path, descriptions_path):
    """Load a graph from a triples TSV and a descriptions TSV."""
    rows = read_triples(triples_path)
    if not rows:
        raise EmptyGraphError(f"empty graph: no triples in {triples_path}")
    graph = build_graph(rows, read_descriptions(descriptions_path))
    logger.info(
        "loaded %d entities, %d relations, %d triples from %s",
        graph.num_entities, graph.num_relations, len(graph.triples), triples_path,
    )
    return graph


def write_graph(graph, triples_path, descriptions_path):
    """Write the graph back out so that load_graph reproduces identical ids."""
    atomic_write_text(triples_path, "".join(
        "\t".join(graph.triple_labels(t)) + "\n" for t in graph.triples
    ))
    atomic_write_text(descriptions_path, "".join(
        f"{e.label}\t{graph.descriptions[e.id]}\n" for e in graph.entities
    ))


# ============================ SPLITS ============================

@dataclass(frozen=True)
class DatasetSplit:
    graph: KnowledgeGraph
    train: tuple
    valid: tuple
    test: tuple
    mode: str
    unseen_entities: frozenset = frozenset()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown split mode {self.mode!r}")
        parts = [set(self.train), set(self.valid), set(self.test)]
        if sum(len(p) for p in parts) != len(parts[0] | parts[1] | parts[2]):
            raise SplitError("train/valid/test triple lists overlap")

    def train_entities(self):
        return _entities_of(self.train)

    def known_entity_mask(self):
        """Boolean mask over all graph entities: True where the entity occurs in train."""
        mask = np.zeros(self.graph.num_entities, dtype=bool)
        for e in self.train_entities():
            mask[e] = True
        return mask

    def uncovered_entities(self):
        """Entities of valid/test triples that never occur in a train triple."""
        return _entities_of(self.valid + self.test) - self.train_entities()

    def answer_index(self):
        """
        Known-true answers over train ∪ valid ∪ test, keyed per query direction:
        ("tail", head, relation) -> tails and ("head", relation, tail) -> heads.
        """
        index = {}
        for t in self.train + self.valid + self.test:
            index.setdefault(("tail", t.head, t.relation), set()).add(t.tail)
            index.setdefault(("head", t.relation, t.tail), set()).add(t.head)
        return index

    def summary(self):
        return {
            "mode": self.mode,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
            "unseen_entities": len(self.unseen_entities),
        }

    def to_json(self):
        pos = self.graph.triple_position
        return {
            "mode": self.mode,
            "train": [pos(t) for t in self.train],
            "valid": [pos(t) for t in self.valid],
            "test": [pos(t) for t in self.test],
            "unseen_entities": sorted(self.graph.entity_label(e) for e in self.unseen_entities),
        }

    @classmethod
    def from_json(cls, graph, data):
        pick = lambda key: tuple(graph.triples[i] for i in data[key])
        return cls(
            graph=graph,
            train=pick("train"),
            valid=pick("valid"),
            test=pick("test"),
            mode=data["mode"],
            unseen_entities=frozenset(graph.entity_id(l) for l in data.get("unseen_entities", [])),
        )


def _entities_of(triples):
    out = set()
    for t in triples:
        out.add(t.head)
        out.add(t.tail)
    return out


def _check_fractions(fractions):
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, valid, test)")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")


def _partition_sizes(n, fractions):
    _, f_valid, f_test = fractions
    n_valid = int(round(f_valid * n))
    n_test = int(round(f_test * n))
    while n - n_valid - n_test < 1 and (n_valid or n_test):
        if n_valid >= n_test:
            n_valid -= 1
        else:
            n_test -= 1
    return n - n_valid - n_test, n_valid, n_test


def _cover_from_train(train_idx, candidates, triples):
    """
    Keep a candidate triple only if both of its entities occur in train;
    otherwise move it into train. Train only grows, so one pass suffices.
    """
    seen = _entities_of(triples[i] for i in train_idx)
    train_idx = list(train_idx)
    kept = []
    for group in candidates:
        out = []
        for i in group:
            t = triples[i]
            if t.head in seen and t.tail in seen:
                out.append(i)
            else:
                train_idx.append(i)
                seen.update((t.head, t.tail))
        kept.append(out)
    return train_idx, kept


def make_split(graph, fractions=(0.8, 0.1, 0.1), mode=TRANSDUCTIVE, seed=0, holdout=None):
    """
    Seeded train/valid/test split.

    transductive: random partition, then every valid/test triple touching a
    train-unseen entity is moved back into train.
    inductive: a seeded entity subset (size round(holdout * |entities in
    triples|), holdout defaulting to the test fraction) is held out; all of
    its triples form the test set and none reaches train or valid.
    """
    _check_fractions(fractions)
    if mode not in MODES:
        raise ValueError(f"unknown split mode {mode!r}")

    triples = graph.triples
    n = len(triples)
    rng = np.random.default_rng(seed)

    if mode == TRANSDUCTIVE:
        order = rng.permutation(n)
        n_train, n_valid, _ = _partition_sizes(n, fractions)
        train_idx, (valid_idx, test_idx) = _cover_from_train(
            order[:n_train].tolist(),
            [order[n_train:n_train + n_valid].tolist(), order[n_train + n_valid:].tolist()],
            triples,
        )
        held_out = frozenset()
    else:
        holdout = fractions[2] if holdout is None else holdout
        if not 0 < holdout < 1:
            raise ValueError(f"holdout fraction must be in (0,1), got {holdout!r}")

        incident = {}
        for i, t in enumerate(triples):
            incident.setdefault(t.head, set()).add(i)
            incident.setdefault(t.tail, set()).add(i)

        candidates = sorted(incident)
        target = max(1, int(round(holdout * len(candidates))))
        selected, touched = [], set()
        for pos in rng.permutation(len(candidates)):
            if len(selected) >= target:
                break
            e = candidates[pos]
            grown = touched | incident[e]
            if len(grown) == n:
                # holding this entity out would leave nothing to train on
                continue
            selected.append(e)
            touched = grown

        if not selected:
            raise InfeasibleSplitError(
                "inductive split infeasible: holding out any entity removes every training triple"
            )

        test_idx = sorted(touched)
        rest = np.array(sorted(set(range(n)) - touched), dtype=np.int64)
        rest = rest[rng.permutation(rest.size)]
        n_valid = min(int(round(fractions[1] * n)), rest.size - 1)
        train_idx, (valid_idx,) = _cover_from_train(
            rest[n_valid:].tolist(), [rest[:n_valid].tolist()], triples
        )
        held_out = frozenset(selected)

    pick = lambda idx: tuple(triples[i] for i in sorted(idx))
    split = DatasetSplit(
        graph=graph,
        train=pick(train_idx),
        valid=pick(valid_idx),
        test=pick(test_idx),
        mode=mode,
    )
    unseen = held_out | split.uncovered_entities()
    split = _with(split, unseen_entities=frozenset(unseen))

    if mode == INDUCTIVE and not (_entities_of(split.test) - split.train_entities()):
        raise InfeasibleSplitError("inductive split produced no unseen test entity")

    logger.info("%s split (seed %d): %s", mode, seed, split.summary())
    return split


def _with(split, **changes):
    fields = dict(
        graph=split.graph, train=split.train, valid=split.valid,
        test=split.test, mode=split.mode, unseen_entities=split.unseen_entities,
    )
    fields.update(changes)
    return DatasetSplit(**fields)


def load_split_files(split_dir, descriptions_path, mode=None):
    """
    Load a pre-made split: train.txt, valid.txt and test.txt under `split_dir`
    sharing one descriptions file. The mode is inferred from coverage when not
    given; a transductive request that the files violate is rejected.
    """
    split_dir = Path(split_dir)
    parts = [read_triples(split_dir / name) for name in SPLIT_FILES]

    graph = build_graph([row for rows in parts for row in rows], read_descriptions(descriptions_path))

    def _resolve(rows):
        out = []
        for h, r, t in rows:
            out.append(Triple(graph.entity_id(h), graph.relation_id(r), graph.entity_id(t)))
        # duplicates inside one file collapse like in build_graph
        return tuple(dict.fromkeys(out))

    train, valid, test = (_resolve(rows) for rows in parts)
    if set(train) & set(valid) or set(train) & set(test) or set(valid) & set(test):
        raise SplitError(f"split files under {split_dir} share triples")

    split = DatasetSplit(graph=graph, train=train, valid=valid, test=test, mode=TRANSDUCTIVE)
    uncovered = split.uncovered_entities()
    inferred = INDUCTIVE if uncovered else TRANSDUCTIVE
    if mode == INDUCTIVE and not (_entities_of(test) - split.train_entities()):
        raise SplitError(
            f"inductive split requested but every test entity under {split_dir} occurs in train.txt"
        )
    if mode == TRANSDUCTIVE and uncovered:
        raise SplitError(
            f"{len(uncovered)} valid/test entities never occur in train.txt; "
            "the files describe an inductive split"
        )
    return _with(split, mode=mode or inferred, unseen_entities=frozenset(uncovered))


def subsample_training(split, fraction, seed=0):
    """Keep a seeded uniform subset of round(fraction * |train|) training triples."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction!r}")
    if fraction == 1:
        return split

    n = len(split.train)
    size = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(n, size=size, replace=False))
    sub = _with(split, train=tuple(split.train[i] for i in keep))
    return _with(sub, unseen_entities=frozenset(split.unseen_entities | sub.uncovered_entities()))


# ============================ FREQUENCY ============================

@dataclass(frozen=True)
class FrequencyTable:
    counts: tuple
    boundaries: tuple

    def count(self, entity_id):
        return self.counts[entity_id]

    def bucket_of(self, entity_id):
        return int(np.searchsorted(self.boundaries, self.counts[entity_id], side="right")) - 1

    def bucket_labels(self):
        b = self.boundaries
        labels = []
        for i, lo in enumerate(b):
            if i == len(b) - 1:
                labels.append(f">={lo}")
            elif lo == 0:
                labels.append(f"<{b[i + 1]}")
            else:
                labels.append(f"{lo}-{b[i + 1] - 1}")
        return labels

    def bucket_members(self):
        members = [[] for _ in self.boundaries]
        for e in range(len(self.counts)):
            members[self.bucket_of(e)].append(e)
        return members

    def share_below(self, threshold):
        """Fraction of entities whose train count is strictly below `threshold`."""
        if not self.counts:
            return 0.0
        return sum(1 for c in self.counts if c < threshold) / len(self.counts)

    def to_json(self):
        return {
            "boundaries": list(self.boundaries),
            "buckets": [
                {"label": label, "entities": len(m)}
                for label, m in zip(self.bucket_labels(), self.bucket_members())
            ],
        }


def entity_frequency(split, boundaries=(0, 20, 50)):
    """Count train-triple occurrences (head or tail) per entity and bucket them."""
    boundaries = tuple(int(b) for b in boundaries)
    if not boundaries:
        raise ValueError("boundaries must not be empty")
    if boundaries[0] != 0:
        raise ValueError("boundaries must start at 0 so buckets partition [0, inf)")
    if any(a >= b for a, b in zip(boundaries, boundaries[1:])):
        raise ValueError(f"boundaries must be strictly ascending, got {list(boundaries)}")

    counts = np.zeros(split.graph.num_entities, dtype=np.int64)
    if split.train:
        arr = np.asarray(split.train, dtype=np.int64)
        np.add.at(counts, arr[:, 0], 1)
        np.add.at(counts, arr[:, 2], 1)
    return FrequencyTable(counts=tuple(int(c) for c in counts), boundaries=boundaries)
