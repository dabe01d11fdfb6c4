# toy.py
# Seeded synthetic knowledge graph with typed clusters, a long-tailed head distribution,
# descriptions that carry the region every answer is drawn from, and echoed facts

import logging

import numpy as np

from kge.graph import build_graph

logger = logging.getLogger(__name__)

GROUPS = ("north", "south", "east", "west")

TYPES = {
    "person": ("writer", "scientist", "artist", "politician", "athlete", "teacher"),
    "city": ("port", "capital", "village", "harbor", "market", "river"),
    "country": ("kingdom", "republic", "island", "federation", "coast", "plateau"),
    "company": ("bank", "studio", "factory", "airline", "publisher", "brewery"),
    "field": ("physics", "poetry", "law", "music", "medicine", "chemistry"),
}

# share of the entity budget per type
TYPE_SHARES = {"person": 0.4, "city": 0.2, "country": 0.1, "company": 0.15, "field": 0.15}

RELATIONS = (
    ("born in", "person", "city"),
    ("lives in", "person", "city"),
    ("citizen of", "person", "country"),
    ("works for", "person", "company"),
    ("studied", "person", "field"),
    ("located in", "city", "country"),
    ("headquartered in", "company", "city"),
    ("active in", "company", "field"),
)

# (h, key, ?) reuses the answer of (h, value, ?) with probability ECHO_RATE when there is one
ECHOES = {"lives in": "born in"}
ECHO_RATE = 0.5

_SYLLABLES = ("ka", "lo", "mi", "ra", "to", "ve", "su", "ni", "da", "pe", "zo", "bu", "ri", "fa", "go", "le")


def _names(rng, count):
    names, seen = [], set()
    while len(names) < count:
        name = "".join(rng.choice(_SYLLABLES, size=3))
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def _zipf_weights(n, exponent):
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def generate_toy(num_entities=200, num_triples=1200, seed=0, zipf=1.1, relations=RELATIONS,
                 echoes=ECHOES, echo_rate=ECHO_RATE):
    """
    Returns (labeled_triples, descriptions).

    Every entity gets a type and one of four regions. The tail of (h, r, ?) is
    drawn, Zipf-weighted, from the tail-type entities of the region of h, so the
    head description predicts the answer region. Heads are drawn Zipf-weighted
    too, which leaves a long tail of rare entities. An echoed relation repeats
    the answer of its source relation for the same head, so a rare answer seen
    once in training comes back under a second relation at test time.
    """
    if num_entities < 4 * len(TYPES):
        raise ValueError(f"need at least {4 * len(TYPES)} entities, got {num_entities}")
    rng = np.random.default_rng(seed)

    types = []
    for t, share in TYPE_SHARES.items():
        types += [t] * max(4, int(round(share * num_entities)))
    types = types[:num_entities]
    types += ["person"] * (num_entities - len(types))

    names = _names(rng, num_entities)
    labels = [f"{t}_{name}" for t, name in zip(types, names)]
    groups = [GROUPS[i % len(GROUPS)] for i in range(num_entities)]
    groups = list(rng.permutation(groups))

    descriptions = {}
    for label, t, name, g in zip(labels, types, names, groups):
        traits = rng.choice(TYPES[t], size=2, replace=False)
        descriptions[label] = f"{name} is a {traits[0]} {t} of the {g} region, known as a {traits[1]}."

    by_type = {t: [i for i, x in enumerate(types) if x == t] for t in TYPES}
    # Zipf ranks are a seeded shuffle of each pool
    head_pools = {t: list(rng.permutation(ids)) for t, ids in by_type.items()}

    triples, seen = [], set()
    answers = {}
    attempts = 0
    while len(triples) < num_triples and attempts < 50 * num_triples:
        attempts += 1
        r = int(rng.integers(len(relations)))
        rel, head_type, tail_type = relations[r]
        pool = head_pools[head_type]
        h = pool[rng.choice(len(pool), p=_zipf_weights(len(pool), zipf))]
        echoed = answers.get((h, echoes.get(rel)), [])
        if echoed and rng.random() < echo_rate:
            t = echoed[int(rng.integers(len(echoed)))]
        else:
            tails = [e for e in head_pools[tail_type] if groups[e] == groups[h] and e != h]
            if not tails:
                continue
            t = tails[rng.choice(len(tails), p=_zipf_weights(len(tails), zipf))]
        key = (h, r, t)
        if key in seen:
            continue
        seen.add(key)
        answers.setdefault((h, rel), []).append(t)
        triples.append((labels[h], rel, labels[t]))

    if len(triples) < num_triples:
        logger.warning("toy graph saturated at %d of %d triples", len(triples), num_triples)
    return triples, descriptions


def make_toy_graph(num_entities=200, num_triples=1200, seed=0):
    triples, descriptions = generate_toy(num_entities, num_triples, seed)
    return build_graph(triples, descriptions)
