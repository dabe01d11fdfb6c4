# text.py
# Word-level vocabulary with one special token per entity, and the input templates
# that turn (entity, relation, description) into token-id sequences with one [MASK]

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from kge.artifacts import atomic_write_text
from kge.errors import FormatError, SequenceLengthError, VocabularyStateError

logger = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(len(SPECIAL_TOKENS))

# prompt([MASK]) of the description input
PROMPT = ("the", "entity", MASK, "is")

TAIL_QUERY = "tail-query"
HEAD_QUERY = "head-query"
DESCRIPTION_INPUT = "description-input"
STORE_TRIPLE_INPUT = "store-triple-input"
SEQUENCE_KINDS = (TAIL_QUERY, HEAD_QUERY, DESCRIPTION_INPUT, STORE_TRIPLE_INPUT)

DEFAULT_MAX_LEN = 64

_WORD_RE = re.compile(r"[^\W_]+|[^\w\s]|_")


def tokenize(text):
    """Lowercase, then split on whitespace and punctuation (punctuation marks become tokens)."""
    return _WORD_RE.findall(text.lower())


def entity_token_string(label):
    # brackets never survive tokenize() as part of a word, so no base token can collide
    return f"[E:{label}]"


# ============================ VOCABULARY ============================

@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    entity_offset: Optional[int] = None
    max_len: int = DEFAULT_MAX_LEN

    _base_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.tokens[:len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise FormatError("vocabulary must start with the special tokens " + " ".join(SPECIAL_TOKENS))
        base_end = len(self.tokens) if self.entity_offset is None else self.entity_offset
        index = {}
        for i, tok in enumerate(self.tokens[:base_end]):
            if tok in index:
                raise FormatError(f"duplicate token {tok!r}")
            index[tok] = i
        object.__setattr__(self, "_base_index", index)

    @property
    def size(self):
        return len(self.tokens)

    @property
    def expanded(self):
        return self.entity_offset is not None

    @property
    def num_entities(self):
        return 0 if self.entity_offset is None else self.size - self.entity_offset

    def word_id(self, word):
        return self._base_index.get(word, UNK_ID)

    def encode_text(self, text):
        # base vocabulary only: entity tokens never appear inside tokenized text
        return [self.word_id(w) for w in tokenize(text)]

    def entity_token(self, entity_id):
        if self.entity_offset is None:
            raise VocabularyStateError("vocabulary has no entity tokens; expand it first")
        if not 0 <= entity_id < self.num_entities:
            raise IndexError(f"entity id {entity_id} out of range 0..{self.num_entities - 1}")
        return self.entity_offset + entity_id

    def decode(self, token_ids):
        return [self.tokens[i] for i in token_ids]

    # ---------------- SERIALIZATION ----------------

    def save(self, path):
        offset = "none" if self.entity_offset is None else str(self.entity_offset)
        atomic_write_text(path, f"#entity_offset={offset}\n" + "".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path, max_len=DEFAULT_MAX_LEN):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("#entity_offset="):
            raise FormatError(f"{path}: missing '#entity_offset=' header")
        raw = lines[0].split("=", 1)[1]
        try:
            offset = None if raw == "none" else int(raw)
        except ValueError:
            raise FormatError(f"{path}: bad entity offset {raw!r}") from None
        tokens = tuple(lines[1:])
        if offset is not None and not len(SPECIAL_TOKENS) <= offset <= len(tokens):
            raise FormatError(f"{path}: entity offset {offset} outside vocabulary of {len(tokens)}")
        return cls(tokens=tokens, entity_offset=offset, max_len=max_len)


def build_vocabulary(graph, min_freq=1, max_len=DEFAULT_MAX_LEN):
    """
    Word vocabulary over relation labels (once per triple mention) and entity
    descriptions. Words seen fewer than `min_freq` times map to [UNK]; the
    prompt words are always kept. Ordering: frequency desc, then lexicographic.
    """
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")

    counts = Counter()
    relation_words = [tokenize(r.label) for r in graph.relations]
    for t in graph.triples:
        counts.update(relation_words[t.relation])
    for text in graph.descriptions:
        counts.update(tokenize(text))

    forced = {w for w in PROMPT if w != MASK}
    words = [w for w in counts if counts[w] >= min_freq and w not in SPECIAL_TOKENS]
    words += [w for w in forced if w not in words]
    words.sort(key=lambda w: (-counts[w], w))

    vocab = Vocabulary(tokens=SPECIAL_TOKENS + tuple(words), max_len=max_len)
    logger.info("vocabulary: %d base tokens (min_freq %d)", vocab.size, min_freq)
    return vocab


def expand_entity_vocabulary(vocab, entities):
    """Append one token per entity as a contiguous block; entity id i -> entity_offset + i."""
    if vocab.expanded:
        raise VocabularyStateError("entity vocabulary already expanded")
    for expected, e in enumerate(entities):
        if e.id != expected:
            raise ValueError(f"entity ids must be contiguous from 0; got {e.id} at {expected}")
    return replace(
        vocab,
        tokens=vocab.tokens + tuple(entity_token_string(e.label) for e in entities),
        entity_offset=vocab.size,
    )


# ============================ SEQUENCES ============================

@dataclass(frozen=True)
class EncodedSequence:
    token_ids: tuple
    mask_position: int
    kind: str
    target: Optional[int] = None

    def __post_init__(self):
        ids = self.token_ids
        if self.kind not in SEQUENCE_KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if len(ids) < 2 or ids[0] != CLS_ID or ids[-1] != SEP_ID:
            raise ValueError("sequence must begin with [CLS] and end with [SEP]")
        if ids.count(MASK_ID) != 1 or ids[self.mask_position] != MASK_ID:
            raise ValueError("sequence must hold exactly one [MASK] at mask_position")

    def __len__(self):
        return len(self.token_ids)


def _require_expanded(vocab):
    if not vocab.expanded:
        raise VocabularyStateError("templates need an expanded vocabulary")


def _fit(vocab, fixed, relation_ids, description_ids):
    """Trim to max_len: description tokens go first (from the right), then relation tokens."""
    budget = vocab.max_len - fixed
    if budget < 0:
        raise SequenceLengthError(
            f"max_len {vocab.max_len} cannot hold the {fixed} mandatory template slots"
        )
    relation_ids = relation_ids[:budget]
    description_ids = description_ids[:budget - len(relation_ids)]
    return relation_ids, description_ids


def build_tail_query(vocab, head, description, relation, target=None):
    """[CLS] <head> d [SEP] r [SEP] [MASK] [SEP]"""
    _require_expanded(vocab)
    rel, desc = _fit(vocab, 6, vocab.encode_text(relation.label), vocab.encode_text(description))
    ids = [CLS_ID, vocab.entity_token(head.id), *desc, SEP_ID, *rel, SEP_ID, MASK_ID, SEP_ID]
    return EncodedSequence(tuple(ids), len(ids) - 2, TAIL_QUERY, target)


def build_head_query(vocab, relation, tail, description, target=None):
    """[CLS] [MASK] [SEP] r [SEP] <tail> d [SEP]"""
    _require_expanded(vocab)
    rel, desc = _fit(vocab, 6, vocab.encode_text(relation.label), vocab.encode_text(description))
    ids = [CLS_ID, MASK_ID, SEP_ID, *rel, SEP_ID, vocab.entity_token(tail.id), *desc, SEP_ID]
    return EncodedSequence(tuple(ids), 1, HEAD_QUERY, target)


def build_description_input(vocab, entity, description):
    """[CLS] the entity [MASK] is [SEP] d [SEP], supervised with the entity itself."""
    _require_expanded(vocab)
    _, desc = _fit(vocab, len(PROMPT) + 3, [], vocab.encode_text(description))
    prompt = [MASK_ID if w == MASK else vocab.word_id(w) for w in PROMPT]
    ids = [CLS_ID, *prompt, SEP_ID, *desc, SEP_ID]
    return EncodedSequence(tuple(ids), 1 + PROMPT.index(MASK), DESCRIPTION_INPUT, entity.id)


# ---------------- graph-level helpers ----------------

def tail_query_for(vocab, graph, head_id, relation_id, target=None):
    return build_tail_query(
        vocab, graph.entities[head_id], graph.description(head_id),
        graph.relations[relation_id], target,
    )


def head_query_for(vocab, graph, relation_id, tail_id, target=None):
    return build_head_query(
        vocab, graph.relations[relation_id], graph.entities[tail_id],
        graph.description(tail_id), target,
    )


def queries_for_triple(vocab, graph, triple):
    """Both directions of one triple: (tail query -> tail, head query -> head)."""
    return (
        tail_query_for(vocab, graph, triple.head, triple.relation, target=triple.tail),
        head_query_for(vocab, graph, triple.relation, triple.tail, target=triple.head),
    )


def description_inputs(vocab, graph, entity_ids=None):
    """Description inputs for the given entities (all by default), skipping empty texts."""
    ids = range(graph.num_entities) if entity_ids is None else sorted(entity_ids)
    return [
        build_description_input(vocab, graph.entities[e], graph.description(e))
        for e in ids
        if graph.description(e).strip()
    ]
