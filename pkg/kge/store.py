# store.py
# Explicit entity memory: keys are [MASK] anchor vectors, values are entity ids
# Retrieval is exact k-nearest-neighbour search under Euclidean distance

import logging
import re
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from kge.artifacts import atomic_write_bytes
from kge.encoder import encode_batch
from kge.errors import FormatError
from kge.text import STORE_TRIPLE_INPUT, description_inputs, queries_for_triple

logger = logging.getLogger(__name__)

DESCRIPTION = "description"
TRIPLE = "triple"
PROVENANCE_CODES = {DESCRIPTION: "D", TRIPLE: "T"}
PROVENANCE_NAMES = {v: k for k, v in PROVENANCE_CODES.items()}

SLOT_NONE, SLOT_HEAD, SLOT_TAIL = "-", "H", "T"

SOURCES = ("descriptions", "triples")

STORE_MAGIC = "KNNKGE-STORE"
STORE_TEXT_MAGIC = "KNNKGE-STORE-TEXT"
STORE_VERSION = 1
_HEADER_RE = re.compile(r"^(KNNKGE-STORE(?:-TEXT)?) v(\d+) dim=(\d+) n=(\d+)$")
CRC_FMT = "<I"


@dataclass(frozen=True)
class StoreEntry:
    key: np.ndarray
    value: int
    provenance: str
    # entity id for description entries, triple position in the graph for triple entries
    source: int
    slot: str = SLOT_NONE


@dataclass(frozen=True)
class NeighborHit:
    entity: int
    distance: float
    index: int


# ============================ STORE ============================

class KnowledgeStore:
    """Column-oriented store: entry i is (keys[i], values[i], provenance[i], sources[i], slots[i])."""

    def __init__(self, dim, keys, values, provenance, sources, slots):
        self.dim = int(dim)
        self.keys = np.ascontiguousarray(keys, dtype=np.float64).reshape(-1, self.dim)
        self.values = np.asarray(values, dtype=np.int64)
        self.provenance = np.asarray(provenance, dtype="U1")
        self.sources = np.asarray(sources, dtype=np.int64)
        self.slots = np.asarray(slots, dtype="U1")
        n = self.keys.shape[0]
        if not all(a.shape == (n,) for a in (self.values, self.provenance, self.sources, self.slots)):
            raise ValueError("store columns differ in length")
        if not np.isfinite(self.keys).all():
            raise ValueError("store keys must be finite")

    @classmethod
    def from_entries(cls, dim, entries):
        entries = list(entries)
        for e in entries:
            if e.key.shape != (dim,):
                raise ValueError(f"entry key of shape {e.key.shape} in a store of dim {dim}")
        return cls(
            dim,
            np.array([e.key for e in entries], dtype=np.float64).reshape(len(entries), dim),
            [e.value for e in entries],
            [PROVENANCE_CODES[e.provenance] for e in entries],
            [e.source for e in entries],
            [e.slot for e in entries],
        )

    def __len__(self):
        return self.keys.shape[0]

    def entry(self, i):
        return StoreEntry(
            key=self.keys[i].copy(),
            value=int(self.values[i]),
            provenance=PROVENANCE_NAMES[self.provenance[i]],
            source=int(self.sources[i]),
            slot=str(self.slots[i]),
        )

    def counts_by_provenance(self):
        return {name: int(np.sum(self.provenance == code)) for name, code in PROVENANCE_CODES.items()}

    def distinct_entities(self):
        return set(np.unique(self.values).tolist())

    def same_as(self, other, atol=0.0):
        """Canonical comparison: order, values, provenance and sources exactly; keys within atol."""
        return (
            self.dim == other.dim
            and len(self) == len(other)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.provenance, other.provenance)
            and np.array_equal(self.sources, other.sources)
            and np.array_equal(self.slots, other.slots)
            and (np.array_equal(self.keys, other.keys) if atol == 0
                 else np.allclose(self.keys, other.keys, rtol=0.0, atol=atol))
        )

    def __eq__(self, other):
        return isinstance(other, KnowledgeStore) and self.same_as(other)

    __hash__ = None


# ============================ BUILD ============================

def build_store_descriptions(model, graph, warnings=None):
    """One entry per entity with a non-empty description, in entity-id order."""
    seqs = description_inputs(model.vocab, graph)
    skipped = graph.num_entities - len(seqs)
    if warnings is not None:
        warnings["empty_descriptions"] = warnings.get("empty_descriptions", 0) + skipped
    if skipped:
        logger.warning("skipped %d entit(y/ies) with empty descriptions", skipped)
    keys = encode_batch(model, seqs)
    return [
        StoreEntry(key=keys[i], value=s.target, provenance=DESCRIPTION, source=s.target)
        for i, s in enumerate(seqs)
    ]


def build_store_triples(model, split):
    """
    Two entries per train triple, in triple order: the tail query keyed entry
    valued with the tail, then the head query keyed entry valued with the head.
    """
    graph = split.graph
    seqs, meta = [], []
    for t in split.train:
        tail_q, head_q = queries_for_triple(model.vocab, graph, t)
        pos = graph.triple_position(t)
        seqs += [replace(tail_q, kind=STORE_TRIPLE_INPUT), replace(head_q, kind=STORE_TRIPLE_INPUT)]
        meta += [(t.tail, pos, SLOT_TAIL), (t.head, pos, SLOT_HEAD)]
    keys = encode_batch(model, seqs) if seqs else np.empty((0, model.dim))
    return [
        StoreEntry(key=keys[i], value=value, provenance=TRIPLE, source=pos, slot=slot)
        for i, (value, pos, slot) in enumerate(meta)
    ]


def build_store(model, split, sources=SOURCES):
    unknown = set(sources) - set(SOURCES)
    if unknown or not sources:
        raise ValueError(f"store sources must be a non-empty subset of {SOURCES}, got {list(sources)}")
    entries = []
    if "descriptions" in sources:
        entries += build_store_descriptions(model, split.graph)
    if "triples" in sources:
        entries += build_store_triples(model, split)
    store = KnowledgeStore.from_entries(model.dim, entries)
    logger.info("knowledge store: %d entries %s", len(store), store.counts_by_provenance())
    return store


# ============================ SEARCH ============================

def _anchor_vector(store, anchor):
    vec = np.asarray(getattr(anchor, "vector", anchor), dtype=np.float64)
    if vec.shape != (store.dim,):
        raise ValueError(f"anchor of shape {vec.shape} does not match store dim {store.dim}")
    return vec


def _nearest(keys, vec, k, base=0):
    """(distances, global indices) of the k closest rows; ties by ascending index."""
    dist = cdist(vec[None, :], keys)[0]
    idx = np.arange(base, base + keys.shape[0])
    order = np.lexsort((idx, dist))[:k]
    return dist[order], idx[order]


def knn_search(store, anchor, k, workers=1):
    """
    Exact k nearest entries by Euclidean distance, ascending, ties broken by
    entry index. With workers > 1 the store is scanned in contiguous chunks in
    parallel and the per-chunk winners are merged under the same ordering.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(store) == 0:
        raise ValueError("knowledge store is empty")
    vec = _anchor_vector(store, anchor)
    k = min(k, len(store))

    if workers <= 1 or len(store) < 2 * workers:
        dist, idx = _nearest(store.keys, vec, k)
    else:
        bounds = np.linspace(0, len(store), workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda lo_hi: _nearest(store.keys[lo_hi[0]:lo_hi[1]], vec, k, lo_hi[0]),
                zip(bounds[:-1], bounds[1:]),
            ))
        dist = np.concatenate([p[0] for p in parts])
        idx = np.concatenate([p[1] for p in parts])
        order = np.lexsort((idx, dist))[:k]
        dist, idx = dist[order], idx[order]

    return [NeighborHit(int(store.values[i]), float(d), int(i)) for d, i in zip(dist, idx)]


def dedupe_per_entity(hits):
    """Keep the first (closest) hit of every entity; order is preserved."""
    seen, out = set(), []
    for h in hits:
        if h.entity not in seen:
            seen.add(h.entity)
            out.append(h)
    return out


def nearest_entities(store, anchor, k, workers=1):
    """The k closest distinct entities: the search widens until k survive deduplication."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    width = k
    while True:
        hits = knn_search(store, anchor, width, workers)
        unique = dedupe_per_entity(hits)
        if len(unique) >= k or width >= len(store):
            return unique[:k]
        width = min(2 * width, len(store))


def knn_distribution(hits, temperature=1.0):
    """
    Sparse p_kNN over the deduplicated hits: softmax of -distance / temperature.
    Returns {entity: probability} in hit order.
    """
    if not hits:
        raise ValueError("p_kNN needs at least one neighbour")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    entities = [h.entity for h in hits]
    if len(set(entities)) != len(entities):
        raise ValueError("hits must be deduplicated per entity")
    probs = softmax(-np.array([h.distance for h in hits], dtype=np.float64) / temperature)
    return dict(zip(entities, probs.tolist()))


def sparse_to_dense(p_knn, num_entities):
    dense = np.zeros(num_entities, dtype=np.float64)
    for e, p in p_knn.items():
        dense[e] = p
    return dense


# ============================ PERSISTENCE ============================

def _record_dtype(dim):
    return np.dtype([
        ("entity", "<i8"), ("provenance", "S1"), ("source", "<i8"), ("slot", "S1"), ("key", "<f8", (dim,)),
    ])


def save_store(store, path, text=False):
    """
    Binary: header line, fixed-size little-endian records, CRC32 trailer.
    Text (debug): header line, one tab-separated row per entry with exact decimal keys.
    """
    n = len(store)
    if text:
        lines = [f"{STORE_TEXT_MAGIC} v{STORE_VERSION} dim={store.dim} n={n}\n"]
        for i in range(n):
            key = " ".join(repr(float(x)) for x in store.keys[i])
            lines.append(
                f"{store.values[i]}\t{store.provenance[i]}\t{store.sources[i]}\t{store.slots[i]}\t{key}\n"
            )
        return atomic_write_bytes(path, "".join(lines).encode("utf-8"))

    records = np.zeros(n, dtype=_record_dtype(store.dim))
    records["entity"] = store.values
    records["provenance"] = np.char.encode(store.provenance, "ascii") if n else []
    records["source"] = store.sources
    records["slot"] = np.char.encode(store.slots, "ascii") if n else []
    records["key"] = store.keys
    blob = f"{STORE_MAGIC} v{STORE_VERSION} dim={store.dim} n={n}\n".encode("ascii") + records.tobytes()
    return atomic_write_bytes(path, blob + struct.pack(CRC_FMT, zlib.crc32(blob) & 0xFFFFFFFF))


def _parse_header(line, path):
    m = _HEADER_RE.match(line)
    if not m:
        raise FormatError(f"{path}: not a knnkge store file")
    magic, version, dim, n = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    if dim < 1:
        raise FormatError(f"{path}: bad store dim {dim}")
    return magic, dim, n


def load_store(path, expected_dim=None):
    path = Path(path)
    data = path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing store header")
    magic, dim, n = _parse_header(data[:newline].decode("ascii", errors="replace"), path)
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(f"{path}: store dim {dim} does not match expected dim {expected_dim}")

    if magic == STORE_TEXT_MAGIC:
        rows = data[newline + 1:].decode("utf-8").splitlines()
        if len(rows) != n:
            raise FormatError(f"{path}: header promises {n} entries, found {len(rows)}")
        values, prov, sources, slots, keys = [], [], [], [], []
        for line_no, row in enumerate(rows, start=2):
            parts = row.split("\t")
            key = parts[4].split() if len(parts) == 5 else []
            if len(key) != dim or parts[1] not in PROVENANCE_NAMES:
                raise FormatError(f"{path}:{line_no}: malformed store row")
            try:
                values.append(int(parts[0]))
                sources.append(int(parts[2]))
                keys.append([float(x) for x in key])
            except ValueError as e:
                raise FormatError(f"{path}:{line_no}: malformed store row ({e})") from None
            prov.append(parts[1])
            slots.append(parts[3])
        return KnowledgeStore(dim, np.array(keys, dtype=np.float64).reshape(n, dim), values, prov, sources, slots)

    rec = _record_dtype(dim)
    crc_size = struct.calcsize(CRC_FMT)
    expected = newline + 1 + n * rec.itemsize + crc_size
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n} entries, found {len(data)}")
    (crc,) = struct.unpack(CRC_FMT, data[-crc_size:])
    if zlib.crc32(data[:-crc_size]) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: CRC mismatch (corrupted store)")

    if n == 0:
        return KnowledgeStore(dim, np.empty((0, dim)), [], [], [], [])
    records = np.frombuffer(data[newline + 1:-crc_size], dtype=rec)
    return KnowledgeStore(
        dim,
        records["key"].astype(np.float64),
        records["entity"].astype(np.int64),
        np.char.decode(records["provenance"], "ascii"),
        records["source"].astype(np.int64),
        np.char.decode(records["slot"], "ascii"),
    )
