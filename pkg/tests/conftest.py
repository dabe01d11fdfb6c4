import pytest

from kge.encoder import EncoderModel
from kge.graph import TRANSDUCTIVE, DatasetSplit, build_graph, make_split
from kge.text import build_vocabulary, expand_entity_vocabulary
from kge.toy import make_toy_graph

PLATO_TRIPLES = "Plato\tnationality\tGreece\nPlato\tlives\tAthens\n"
PLATO_DESCRIPTIONS = (
    "Plato\tGreek philosopher\n"
    "Greece\tcountry in southern Europe\n"
    "Athens\tcapital city of Greece\n"
)


@pytest.fixture
def plato_files(tmp_path):
    triples = tmp_path / "triples.tsv"
    descriptions = tmp_path / "descriptions.tsv"
    triples.write_text(PLATO_TRIPLES, encoding="utf-8")
    descriptions.write_text(PLATO_DESCRIPTIONS, encoding="utf-8")
    return triples, descriptions


@pytest.fixture
def plato_graph():
    return build_graph(
        [("Plato", "nationality", "Greece"), ("Plato", "lives", "Athens")],
        {"Plato": "Greek philosopher", "Greece": "country in southern Europe",
         "Athens": "capital city of Greece"},
    )


@pytest.fixture
def plato_split(plato_graph):
    return DatasetSplit(plato_graph, train=plato_graph.triples, valid=(), test=(), mode=TRANSDUCTIVE)


def chain(n=10):
    """e0 -r0-> e1 -r1-> e2 ... with one description per entity."""
    rows = [(f"e{i}", f"r{i % 2}", f"e{i + 1}") for i in range(n)]
    descriptions = {f"e{i}": f"entity number {i} of the chain" for i in range(n + 1)}
    return build_graph(rows, descriptions)


@pytest.fixture
def chain_graph():
    return chain()


def make_model(graph, dim=8, layers=1, heads=2, seed=0, max_len=32, known=None):
    vocab = expand_entity_vocabulary(build_vocabulary(graph, max_len=max_len), graph.entities)
    model = EncoderModel(vocab, dim=dim, layers=layers, heads=heads, seed=seed)
    if known is not None:
        model.set_known_entities(known)
    return model


@pytest.fixture(scope="session")
def toy_graph():
    return make_toy_graph(num_entities=40, num_triples=150, seed=0)


@pytest.fixture(scope="session")
def toy_split(toy_graph):
    return make_split(toy_graph, seed=0)
