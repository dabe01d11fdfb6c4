# encoder.py
# Small from-scratch contextual encoder with a tied MEM head
# Stage 1 (expansion) fits only the entity-token rows from descriptions with everything else frozen;
# stage 2 (mem) trains all parameters on head/tail queries and known descriptions. Everything runs in float64 on CPU.

import logging
import math
import random
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from kge.artifacts import atomic_write_bytes
from kge.errors import ConfigError, FormatError, SequenceLengthError, TrainingDivergedError
from kge.text import (
    DESCRIPTION_INPUT,
    HEAD_QUERY,
    PAD_ID,
    STORE_TRIPLE_INPUT,
    TAIL_QUERY,
    description_inputs,
    queries_for_triple,
)

logger = logging.getLogger(__name__)

DTYPE = torch.float64
# entity-token rows start small; every other embedding row is unit scale
INIT_STD = 0.02

EXPANSION = "expansion"
MEM = "mem"
STAGES = (EXPANSION, MEM)
# stage codes stored in checkpoints
STAGE_CODES = {"init": 0, EXPANSION: 1, MEM: 2}


def set_deterministic(seed: int = 0):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


# ============================ CONFIG ============================

@dataclass(frozen=True)
class TrainConfig:
    stage: str
    lr: float
    epochs: int
    # None trains full batch
    batch_size: Optional[int]
    seed: int = 0
    dim: int = 64
    layers: int = 2
    heads: int = 2
    max_len: int = 64
    ffn: Optional[int] = None
    # mem stage: also fit the description inputs of the known entities
    descriptions: bool = True

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown training stage {self.stage!r}")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValueError(f"batch_size must be positive or None, got {self.batch_size!r}")
        for name in ("lr", "epochs", "dim", "layers", "heads", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class AnchorEmbedding:
    vector: np.ndarray
    kind: str

    @property
    def dim(self):
        return int(self.vector.shape[0])


# ============================ MODEL ============================

class SelfAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim, dtype=DTYPE)
        self.out = nn.Linear(dim, dim, dtype=DTYPE)

    def forward(self, x, padding):
        b, length, dim = x.shape
        head_dim = dim // self.heads
        q, k, v = self.qkv(x).view(b, length, 3, self.heads, head_dim).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(head_dim)
        scores = scores.masked_fill(padding[:, None, None, :], float("-inf"))
        context = torch.softmax(scores, dim=-1) @ v
        return self.out(context.transpose(1, 2).reshape(b, length, dim))


class EncoderBlock(nn.Module):
    def __init__(self, dim, heads, ffn):
        super().__init__()
        self.attention = SelfAttention(dim, heads)
        self.attention_norm = nn.LayerNorm(dim, dtype=DTYPE)
        self.ffn_in = nn.Linear(dim, ffn, dtype=DTYPE)
        self.ffn_out = nn.Linear(ffn, dim, dtype=DTYPE)
        self.ffn_norm = nn.LayerNorm(dim, dtype=DTYPE)

    def forward(self, x, padding):
        x = x + self.attention(self.attention_norm(x), padding)
        return x + self.ffn_out(F.gelu(self.ffn_in(self.ffn_norm(x))))


class EncoderModel(nn.Module):
    """
    Token + position embeddings, `layers` pre-norm transformer blocks, a final
    LayerNorm, and a MEM head that scores the hidden state at [MASK] against the
    entity-token rows of the token embedding matrix (weight tying: the head *is*
    those rows).

    Only entities flagged in `known_entities` take part in the MEM softmax;
    the rest get probability 0 and are reachable through the knowledge store only.
    """

    def __init__(self, vocab, dim=64, layers=2, heads=2, ffn=None, seed=0):
        super().__init__()
        if not vocab.expanded:
            raise ValueError("the encoder needs a vocabulary with entity tokens")
        if dim < 8:
            raise ValueError(f"dim must be >= 8, got {dim}")
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by {heads} heads")

        self.vocab = vocab
        self.dim = dim
        self.num_layers = layers
        self.heads = heads
        self.ffn = ffn or 2 * dim
        self.stage = "init"

        self.token_embeddings = nn.Parameter(torch.empty(vocab.size, dim, dtype=DTYPE))
        self.position_embeddings = nn.Parameter(torch.empty(vocab.max_len, dim, dtype=DTYPE))
        self.blocks = nn.ModuleList(EncoderBlock(dim, heads, self.ffn) for _ in range(layers))
        self.final_norm = nn.LayerNorm(dim, dtype=DTYPE)
        self.register_buffer("known_entities", torch.ones(vocab.num_entities, dtype=torch.bool))

        self._init_weights(seed)

    # ---------------- parameters ----------------

    def _init_weights(self, seed):
        """
        Embeddings N(0, 1), entity rows N(0, INIT_STD), linear weights N(0, 1/fan_in)
        with the residual projections further scaled by 1/sqrt(2 * layers).
        """
        gen = torch.Generator().manual_seed(seed)
        residual_scale = 1.0 / math.sqrt(2 * self.num_layers)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if "norm" in name:
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                elif "embeddings" in name:
                    p.copy_(torch.normal(0.0, 1.0, p.shape, generator=gen, dtype=DTYPE))
                else:
                    std = 1.0 / math.sqrt(p.shape[1])
                    if name.endswith(("attention.out.weight", "ffn_out.weight")):
                        std *= residual_scale
                    p.copy_(torch.normal(0.0, std, p.shape, generator=gen, dtype=DTYPE))
        self.reset_entity_embeddings(seed)

    def reset_entity_embeddings(self, seed):
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.entity_embeddings.copy_(
                torch.normal(0.0, INIT_STD, self.entity_embeddings.shape, generator=gen, dtype=DTYPE)
            )

    @property
    def entity_offset(self):
        return self.vocab.entity_offset

    @property
    def num_entities(self):
        return self.vocab.num_entities

    @property
    def max_len(self):
        return self.vocab.max_len

    @property
    def entity_embeddings(self):
        # a view: writes here are writes to token_embeddings and vice versa
        return self.token_embeddings[self.entity_offset:]

    def set_known_entities(self, mask):
        mask = torch.as_tensor(np.asarray(mask, dtype=bool))
        if mask.shape != self.known_entities.shape:
            raise ValueError(f"known-entity mask of shape {tuple(mask.shape)} for {self.num_entities} entities")
        self.known_entities.copy_(mask)

    # ---------------- forward ----------------

    def forward(self, token_ids, padding, mask_positions):
        """Hidden states at the [MASK] slots: [batch, dim]."""
        length = token_ids.shape[1]
        x = self.token_embeddings[token_ids] + self.position_embeddings[:length]
        for block in self.blocks:
            x = block(x, padding)
        return self.final_norm(x[torch.arange(x.shape[0]), mask_positions])

    def mem_logits(self, anchors):
        logits = anchors @ self.entity_embeddings.T
        return logits.masked_fill(~self.known_entities, float("-inf"))


# ============================ BATCHING ============================

def collate(model, seqs):
    """Pad a batch to its longest sequence; returns (ids, padding mask, mask positions)."""
    if not seqs:
        raise ValueError("empty batch")
    length = max(len(s) for s in seqs)
    if length > model.max_len:
        raise SequenceLengthError(f"sequence of length {length} exceeds max_len {model.max_len}")
    ids = torch.full((len(seqs), length), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = torch.tensor(s.token_ids, dtype=torch.long)
    if int(ids.max()) >= model.vocab.size or int(ids.min()) < 0:
        raise IndexError(f"token id out of range for vocabulary of {model.vocab.size}")
    positions = torch.tensor([s.mask_position for s in seqs], dtype=torch.long)
    return ids, ids == PAD_ID, positions


def _targets(model, seqs, kinds):
    for s in seqs:
        if s.kind not in kinds:
            raise ValueError(f"{s.kind} sequence in a batch expecting {'/'.join(kinds)}")
        if s.target is None:
            raise ValueError("training sequence without a target entity")
    targets = torch.tensor([s.target for s in seqs], dtype=torch.long)
    if not bool(model.known_entities[targets].all()):
        raise ValueError("target entity is excluded from the MEM head")
    return targets


# ============================ INFERENCE ============================

@torch.no_grad()
def encode_batch(model, seqs, batch_size=256):
    """Anchor vectors for many sequences, in input order: float64 [n, dim]."""
    out = np.empty((len(seqs), model.dim), dtype=np.float64)
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        out[start:start + len(chunk)] = model(*collate(model, chunk)).numpy()
    return out


def encode(model, seq):
    """f(x): the final-layer hidden state at the [MASK] position."""
    return AnchorEmbedding(vector=encode_batch(model, [seq])[0], kind=seq.kind)


@torch.no_grad()
def mem_distributions(model, anchors):
    """Rows of p_MEM for anchor vectors [n, dim] -> [n, |E|]; excluded entities get exactly 0."""
    if not bool(model.known_entities.any()):
        raise ValueError("no entity is known to the MEM head")
    logits = model.mem_logits(torch.as_tensor(np.atleast_2d(anchors), dtype=DTYPE))
    return torch.softmax(logits, dim=-1).numpy()


def mem_distribution(model, seq):
    """p_MEM(e | x) over all entities."""
    return mem_distributions(model, encode(model, seq).vector)[0]


# ============================ LOSSES ============================

def _cross_entropy(model, seqs, kinds):
    targets = _targets(model, seqs, kinds)
    anchors = model(*collate(model, seqs))
    # mean of per-example -log p([MASK] = target); the 1/|E| factor becomes batch averaging
    return F.cross_entropy(model.mem_logits(anchors), targets)


def expansion_loss(model, batch):
    return _cross_entropy(model, batch, (DESCRIPTION_INPUT,))


def mem_loss(model, batch):
    return _cross_entropy(model, batch, (TAIL_QUERY, HEAD_QUERY, STORE_TRIPLE_INPUT, DESCRIPTION_INPUT))


# ============================ TRAINING ============================

def _run_epochs(model, seqs, config, loss_fn, step, log):
    rng = np.random.default_rng(config.seed)
    size = config.batch_size or len(seqs)
    last_finite = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(seqs))
        total = 0.0
        for start in range(0, len(seqs), size):
            batch = [seqs[i] for i in order[start:start + size]]
            model.zero_grad(set_to_none=True)
            loss = loss_fn(model, batch)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(config.stage, epoch, last_finite)
            loss.backward()
            step()
            total += value * len(batch)
        epoch_loss = total / len(seqs)
        last_finite = epoch_loss
        logger.info("%s epoch %d/%d loss %.6f", config.stage, epoch, config.epochs, epoch_loss)
        if log is not None:
            log.append({"stage": config.stage, "epoch": epoch, "loss": epoch_loss})
    return model


def train_expansion(model, graph, config, log=None):
    """
    Entity vocabulary expansion: re-initialize the entity-token rows, then fit
    them alone on description inputs. Every other parameter (including the
    non-entity rows of the embedding matrix) is left bit-identical.
    """
    if config.stage != EXPANSION:
        raise ValueError(f"train_expansion needs stage {EXPANSION!r}, got {config.stage!r}")

    model.reset_entity_embeddings(config.seed)
    known = np.flatnonzero(model.known_entities.numpy())
    seqs = description_inputs(model.vocab, graph, known)
    if not seqs:
        logger.warning("no known entity has a description; expansion stage skipped")
        model.stage = EXPANSION
        return model

    offset = model.entity_offset
    saved_flags = {name: p.requires_grad for name, p in model.named_parameters()}
    for p in model.parameters():
        p.requires_grad_(False)
    model.token_embeddings.requires_grad_(True)

    def step():
        with torch.no_grad():
            grad = model.token_embeddings.grad
            model.token_embeddings[offset:] -= config.lr * grad[offset:]

    try:
        _run_epochs(model, seqs, config, expansion_loss, step, log)
    finally:
        for name, p in model.named_parameters():
            p.requires_grad_(saved_flags[name])
        model.zero_grad(set_to_none=True)

    model.stage = EXPANSION
    return model


def mem_training_sequences(model, split):
    """Two sequences per train triple: the tail query and the head query."""
    seqs = []
    for t in split.train:
        seqs.extend(queries_for_triple(model.vocab, split.graph, t))
    return seqs


def mem_description_sequences(model, graph):
    """Description inputs of the entities the MEM head covers."""
    return description_inputs(model.vocab, graph, np.flatnonzero(model.known_entities.numpy()))


def train_mem(model, split, config, log=None, require_expansion=True):
    """
    Masked entity modeling over both query directions of every train triple; all
    of Θ trains. With `config.descriptions` the known entities' description
    inputs are fitted alongside, so description and query anchors share one space.
    """
    if config.stage != MEM:
        raise ValueError(f"train_mem needs stage {MEM!r}, got {config.stage!r}")
    if require_expansion and model.stage == "init":
        raise ConfigError("masked entity modeling needs the expansion stage to have run first")

    seqs = mem_training_sequences(model, split)
    if not seqs:
        raise ValueError("split has no training triples")
    if config.descriptions:
        seqs += mem_description_sequences(model, split.graph)

    optimizer = torch.optim.SGD(model.parameters(), lr=config.lr)
    try:
        _run_epochs(model, seqs, config, mem_loss, optimizer.step, log)
    finally:
        model.zero_grad(set_to_none=True)

    model.stage = MEM
    return model


def new_model(vocab, split, config):
    """Fresh seeded model whose MEM head covers exactly the train entities of `split`."""
    set_deterministic(config.seed)
    if config.max_len != vocab.max_len:
        vocab = replace(vocab, max_len=config.max_len)
    model = EncoderModel(vocab, dim=config.dim, layers=config.layers, heads=config.heads,
                         ffn=config.ffn, seed=config.seed)
    model.set_known_entities(split.known_entity_mask())
    return model


def fit_model(vocab, split, expansion_config, mem_config, log=None, on_expansion=None):
    """Both stages in order. `on_expansion(model)` runs between them (e.g. to checkpoint)."""
    model = new_model(vocab, split, expansion_config)
    train_expansion(model, split.graph, expansion_config, log)
    if on_expansion is not None:
        on_expansion(model)
    return train_mem(model, split, mem_config, log)


# ============================ CHECKPOINTS ============================

CKPT_MAGIC = b"KNNKGECK"
CKPT_VERSION = 1
# version, dim, layers, heads, max_len, vocab size, entity_offset, ffn, entities, stage
CKPT_HEADER_FMT = "<10I"
CRC_FMT = "<I"


def save_checkpoint(model, path):
    """
    MAGIC | header | every state_dict tensor in registration order as
    float64 little-endian | CRC32 of everything before it.
    """
    header = struct.pack(
        CKPT_HEADER_FMT, CKPT_VERSION, model.dim, model.num_layers, model.heads,
        model.max_len, model.vocab.size, model.entity_offset, model.ffn,
        model.num_entities, STAGE_CODES[model.stage],
    )
    body = b"".join(
        t.detach().to(DTYPE).numpy().astype("<f8").tobytes()
        for t in model.state_dict().values()
    )
    blob = CKPT_MAGIC + header + body
    return atomic_write_bytes(path, blob + struct.pack(CRC_FMT, zlib.crc32(blob) & 0xFFFFFFFF))


def read_checkpoint_header(data, path="checkpoint"):
    head_len = len(CKPT_MAGIC) + struct.calcsize(CKPT_HEADER_FMT)
    if len(data) < head_len + struct.calcsize(CRC_FMT) or data[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a knnkge checkpoint")
    fields = struct.unpack(CKPT_HEADER_FMT, data[len(CKPT_MAGIC):head_len])
    keys = ("version", "dim", "layers", "heads", "max_len", "vocab_size",
            "entity_offset", "ffn", "entities", "stage")
    header = dict(zip(keys, fields))
    if header["version"] != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header['version']}")
    return header, head_len


def load_checkpoint(path, vocab):
    path = Path(path)
    data = path.read_bytes()
    header, offset = read_checkpoint_header(data, path)

    crc_size = struct.calcsize(CRC_FMT)
    (crc,) = struct.unpack(CRC_FMT, data[-crc_size:])
    if zlib.crc32(data[:-crc_size]) & 0xFFFFFFFF != crc:
        raise FormatError(f"{path}: CRC mismatch (truncated or corrupted checkpoint)")

    if header["vocab_size"] != vocab.size or header["entity_offset"] != vocab.entity_offset:
        raise ConfigError(
            f"{path}: checkpoint/vocab mismatch (checkpoint vocab {header['vocab_size']} "
            f"offset {header['entity_offset']}, vocabulary {vocab.size} offset {vocab.entity_offset})"
        )
    if header["max_len"] != vocab.max_len:
        vocab = replace(vocab, max_len=header["max_len"])

    model = EncoderModel(vocab, dim=header["dim"], layers=header["layers"],
                         heads=header["heads"], ffn=header["ffn"])
    state = model.state_dict()
    expected = sum(t.numel() for t in state.values()) * 8
    payload = data[offset:-crc_size]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} bytes of tensors, found {len(payload)}")

    flat = np.frombuffer(payload, dtype="<f8")
    loaded, pos = {}, 0
    for name, t in state.items():
        chunk = torch.from_numpy(flat[pos:pos + t.numel()].astype(np.float64).reshape(t.shape))
        loaded[name] = chunk > 0.5 if t.dtype == torch.bool else chunk
        pos += t.numel()
    model.load_state_dict(loaded)
    stages = {v: k for k, v in STAGE_CODES.items()}
    if header["stage"] not in stages:
        raise FormatError(f"{path}: unknown training stage code {header['stage']}")
    model.stage = stages[header["stage"]]
    return model
