import copy
import math
import struct
import zlib
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import chain, make_model
from kge import encoder
from kge.encoder import (
    EXPANSION,
    MEM,
    TrainConfig,
    encode,
    expansion_loss,
    load_checkpoint,
    mem_distribution,
    mem_distributions,
    mem_description_sequences,
    mem_loss,
    mem_training_sequences,
    save_checkpoint,
    train_expansion,
    train_mem,
)
from kge.errors import ConfigError, FormatError, TrainingDivergedError
from kge.graph import TRANSDUCTIVE, DatasetSplit, build_graph
from kge.text import DESCRIPTION_INPUT, MASK_ID, TAIL_QUERY, EncodedSequence, description_inputs, tail_query_for


def _split(graph):
    return DatasetSplit(graph, train=graph.triples, valid=(), test=(), mode=TRANSDUCTIVE)


def _cfg(stage, **kw):
    base = dict(stage=stage, lr=0.05, epochs=3, batch_size=4, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# ================= ENCODING =================

def test_anchor_shape_and_determinism(plato_graph):
    model = make_model(plato_graph)
    seq = tail_query_for(model.vocab, plato_graph, 0, 0)
    a, b = encode(model, seq), encode(model, seq)
    assert a.vector.shape == (model.dim,)
    assert np.isfinite(a.vector).all()
    assert np.array_equal(a.vector, b.vector)


def test_target_does_not_enter_forward(plato_graph):
    model = make_model(plato_graph)
    seq = tail_query_for(model.vocab, plato_graph, 0, 0, target=1)
    assert np.array_equal(encode(model, seq).vector, encode(model, replace(seq, target=2)).vector)


def test_out_of_range_token_id(plato_graph):
    model = make_model(plato_graph)
    seq = EncodedSequence((2, model.vocab.size + 3, MASK_ID, 3), 2, TAIL_QUERY)
    with pytest.raises(IndexError):
        encode(model, seq)


def test_mem_distribution_is_normalized(toy_split):
    model = make_model(toy_split.graph, known=toy_split.known_entity_mask())
    for t in toy_split.test[:20]:
        p = mem_distribution(model, tail_query_for(model.vocab, toy_split.graph, t.head, t.relation))
        assert p.sum() == pytest.approx(1.0, abs=1e-6)
        assert (p >= 0).all()


def test_unknown_entities_get_zero_mass(toy_split):
    mask = toy_split.known_entity_mask()
    mask[:3] = False
    model = make_model(toy_split.graph, known=mask)
    p = mem_distribution(model, description_inputs(model.vocab, toy_split.graph)[0])
    assert (p[:3] == 0.0).all()
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_single_entity_graph():
    graph = build_graph([("a", "r", "a")], {"a": "itself"})
    model = make_model(graph)
    p = mem_distribution(model, description_inputs(model.vocab, graph)[0])
    assert p.tolist() == [1.0]


def test_weight_tying(plato_graph):
    model = make_model(plato_graph)
    with torch.no_grad():
        model.entity_embeddings[1].fill_(0.5)
    assert torch.all(model.token_embeddings[model.entity_offset + 1] == 0.5)
    with torch.no_grad():
        model.token_embeddings[model.entity_offset + 2].fill_(-1.0)
    assert torch.all(model.entity_embeddings[2] == -1.0)


def test_permutation_equivariance(chain_graph):
    model = make_model(chain_graph)
    perm = np.random.default_rng(0).permutation(chain_graph.num_entities)
    permuted = copy.deepcopy(model)
    with torch.no_grad():
        permuted.entity_embeddings.copy_(model.entity_embeddings[torch.as_tensor(perm)])
    seq = description_inputs(model.vocab, chain_graph)[4]
    np.testing.assert_allclose(
        mem_distribution(permuted, seq), mem_distribution(model, seq)[perm], rtol=0, atol=1e-15,
    )


# ================= LOSSES =================

def test_uniform_expansion_loss():
    graph = build_graph([("a", "r", "b"), ("c", "r", "d")], {e: f"about {e}" for e in "abcd"})
    model = make_model(graph)
    with torch.no_grad():
        model.entity_embeddings.zero_()
    loss = expansion_loss(model, description_inputs(model.vocab, graph))
    assert float(loss) == pytest.approx(math.log(4), abs=1e-12)


def test_uniform_mem_loss():
    graph = chain(9)
    model = make_model(graph)
    with torch.no_grad():
        model.entity_embeddings.zero_()
    loss = mem_loss(model, mem_training_sequences(model, _split(graph)))
    assert graph.num_entities == 10
    assert float(loss) == pytest.approx(math.log(10), abs=1e-12)


def test_perfect_fit_loss_is_zero(plato_graph):
    model = make_model(plato_graph)
    seq = description_inputs(model.vocab, plato_graph)[0]
    anchor = torch.as_tensor(encode(model, seq).vector)
    with torch.no_grad():
        model.entity_embeddings.zero_()
        model.entity_embeddings[seq.target] = 1e3 * anchor
    assert float(expansion_loss(model, [seq])) < 1e-12


def test_missing_target_is_an_error(plato_graph):
    model = make_model(plato_graph)
    seq = tail_query_for(model.vocab, plato_graph, 0, 0)
    with pytest.raises(ValueError):
        mem_loss(model, [seq])


def _numeric_grad(loss_fn, param, coords, h=1e-4):
    out = []
    with torch.no_grad():
        for idx in coords:
            orig = param[idx].item()
            param[idx] = orig + h
            plus = float(loss_fn())
            param[idx] = orig - h
            minus = float(loss_fn())
            param[idx] = orig
            out.append((plus - minus) / (2 * h))
    return np.array(out)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_expansion_loss_gradient(plato_graph, seed):
    model = make_model(plato_graph, seed=seed)
    model.reset_entity_embeddings(seed + 100)
    seqs = description_inputs(model.vocab, plato_graph)

    model.zero_grad()
    expansion_loss(model, seqs).backward()
    offset = model.entity_offset
    coords = [(offset + e, j) for e in range(model.num_entities) for j in range(model.dim)]
    analytic = np.array([model.token_embeddings.grad[c].item() for c in coords])
    numeric = _numeric_grad(lambda: expansion_loss(model, seqs), model.token_embeddings, coords)
    assert _rel_err(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_mem_loss_gradient(seed):
    graph = build_graph([("a", "r", "b"), ("b", "s", "c"), ("c", "r", "d"), ("d", "s", "e")],
                        {e: f"entity {e} text" for e in "abcde"})
    model = make_model(graph, seed=seed)
    seqs = mem_training_sequences(model, _split(graph))
    rng = np.random.default_rng(seed)

    model.zero_grad()
    mem_loss(model, seqs).backward()
    params = [p for p in model.parameters() if p.grad is not None]
    for p in (params[i] for i in rng.choice(len(params), size=4, replace=False)):
        coords = [tuple(int(rng.integers(s)) for s in p.shape) for _ in range(6)]
        analytic = np.array([p.grad[c].item() for c in coords])
        numeric = _numeric_grad(lambda: mem_loss(model, seqs), p, coords)
        assert _rel_err(analytic, numeric) < 1e-4


# ================= TRAINING =================

def test_expansion_freezes_backbone(plato_graph):
    model = make_model(plato_graph)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train_expansion(model, plato_graph, _cfg(EXPANSION, epochs=5))
    after = model.state_dict()
    offset = model.entity_offset
    for name, value in before.items():
        if name == "token_embeddings":
            assert torch.equal(after[name][:offset], value[:offset])
            assert not torch.equal(after[name][offset:], value[offset:])
        else:
            assert torch.equal(after[name], value), name
    assert model.stage == EXPANSION
    assert all(p.requires_grad for p in model.parameters())


def test_expansion_fits_descriptions(plato_graph):
    model = make_model(plato_graph)
    train_expansion(model, plato_graph, _cfg(EXPANSION, lr=1.0, epochs=200, batch_size=3))
    seqs = description_inputs(model.vocab, plato_graph)
    predicted = [int(np.argmax(mem_distribution(model, s))) for s in seqs]
    assert predicted == [s.target for s in seqs]


def test_expansion_is_deterministic(plato_graph):
    runs = []
    for _ in range(2):
        model = make_model(plato_graph)
        train_expansion(model, plato_graph, _cfg(EXPANSION))
        runs.append(model.state_dict())
    assert all(torch.equal(runs[0][k], runs[1][k]) for k in runs[0])


def test_two_sequences_per_train_triple(toy_split):
    model = make_model(toy_split.graph, known=toy_split.known_entity_mask())
    assert len(mem_training_sequences(model, toy_split)) == 2 * len(toy_split.train)


def test_mem_stage_also_fits_known_descriptions(plato_graph, plato_split, monkeypatch):
    real = encoder.mem_loss
    seen = []

    def recording(model, batch):
        seen.extend(s.kind for s in batch)
        return real(model, batch)

    monkeypatch.setattr(encoder, "mem_loss", recording)
    masked = make_model(plato_graph, known=[True, True, False])
    assert [s.target for s in mem_description_sequences(masked, plato_graph)] == [0, 1]
    train_mem(make_model(plato_graph), plato_split, _cfg(MEM, epochs=1, batch_size=None), require_expansion=False)
    assert seen.count(DESCRIPTION_INPUT) == 3
    assert len(seen) == 2 * len(plato_split.train) + 3

    seen.clear()
    train_mem(make_model(plato_graph), plato_split, _cfg(MEM, epochs=1, descriptions=False), require_expansion=False)
    assert DESCRIPTION_INPUT not in seen and len(seen) == 2 * len(plato_split.train)


def test_full_batch_expansion_loss_never_rises(toy_split):
    model = make_model(toy_split.graph, dim=16, known=toy_split.known_entity_mask())
    log = []
    train_expansion(model, toy_split.graph, _cfg(EXPANSION, lr=1.0, epochs=30, batch_size=None), log)
    losses = [row["loss"] for row in log]
    assert len(losses) == 30
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]


def test_batch_size_must_be_positive_or_full():
    assert _cfg(EXPANSION, batch_size=None).batch_size is None
    with pytest.raises(ValueError):
        _cfg(EXPANSION, batch_size=0)


def test_mem_needs_expansion_first(plato_graph, plato_split):
    model = make_model(plato_graph)
    with pytest.raises(ConfigError):
        train_mem(model, plato_split, _cfg(MEM))
    train_mem(model, plato_split, _cfg(MEM), require_expansion=False)
    assert model.stage == MEM


def test_mem_loss_decreases_full_batch():
    graph = chain(50)
    split = _split(graph)
    model = make_model(graph)
    train_expansion(model, graph, _cfg(EXPANSION))
    log = []
    train_mem(model, split, _cfg(MEM, lr=1e-3, epochs=6, batch_size=None), log)
    losses = [row["loss"] for row in log if row["stage"] == MEM]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_mem_training_is_deterministic(plato_graph, plato_split):
    runs = []
    for _ in range(2):
        model = make_model(plato_graph)
        train_expansion(model, plato_graph, _cfg(EXPANSION))
        train_mem(model, plato_split, _cfg(MEM))
        runs.append(model.state_dict())
    assert all(torch.equal(runs[0][k], runs[1][k]) for k in runs[0])


def test_divergence_reports_last_finite_loss(plato_graph, plato_split, monkeypatch):
    real = encoder.mem_loss
    calls = []

    def flaky(model, batch):
        calls.append(1)
        loss = real(model, batch)
        return loss if len(calls) == 1 else loss * float("nan")

    monkeypatch.setattr(encoder, "mem_loss", flaky)
    model = make_model(plato_graph)
    log = []
    with pytest.raises(TrainingDivergedError) as err:
        train_mem(model, plato_split, _cfg(MEM, epochs=3, batch_size=None), log, require_expansion=False)
    assert err.value.stage == MEM
    assert err.value.epoch == 2
    assert err.value.last_finite_loss == log[0]["loss"]


# ================= CHECKPOINTS =================

def test_checkpoint_round_trip(tmp_path, plato_graph):
    model = make_model(plato_graph)
    train_expansion(model, plato_graph, _cfg(EXPANSION))
    save_checkpoint(model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(tmp_path / "m.ckpt", model.vocab)
    assert loaded.stage == EXPANSION
    state, again = model.state_dict(), loaded.state_dict()
    assert all(torch.equal(state[k], again[k]) for k in state)


def test_checkpoint_bytes_are_reproducible(tmp_path, plato_graph):
    save_checkpoint(make_model(plato_graph), tmp_path / "a.ckpt")
    save_checkpoint(make_model(plato_graph), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_corrupted_checkpoint(tmp_path, plato_graph):
    model = make_model(plato_graph)
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_checkpoint(path, model.vocab)


def test_truncated_checkpoint(tmp_path, plato_graph):
    model = make_model(plato_graph)
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    path.write_bytes(path.read_bytes()[:-20])
    with pytest.raises(FormatError):
        load_checkpoint(path, model.vocab)


def test_checkpoint_vocab_mismatch(tmp_path, plato_graph, chain_graph):
    path = save_checkpoint(make_model(plato_graph), tmp_path / "m.ckpt")
    with pytest.raises(ConfigError, match="mismatch"):
        load_checkpoint(path, make_model(chain_graph).vocab)


def test_known_mask_survives_checkpoint(tmp_path, toy_split):
    model = make_model(toy_split.graph, known=toy_split.known_entity_mask())
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(path, model.vocab)
    assert torch.equal(loaded.known_entities, model.known_entities)
    probs = mem_distributions(loaded, np.ones(model.dim))
    assert (probs[0][~toy_split.known_entity_mask()] == 0).all()


def test_unknown_stage_code(tmp_path, plato_graph):
    model = make_model(plato_graph)
    path = save_checkpoint(model, tmp_path / "m.ckpt")
    data = bytearray(path.read_bytes()[:-4])
    # stage is the last header field
    stage_at = len(encoder.CKPT_MAGIC) + struct.calcsize(encoder.CKPT_HEADER_FMT) - 4
    data[stage_at:stage_at + 4] = struct.pack("<I", 7)
    path.write_bytes(bytes(data) + struct.pack("<I", zlib.crc32(bytes(data)) & 0xFFFFFFFF))
    with pytest.raises(FormatError, match="stage"):
        load_checkpoint(path, model.vocab)
