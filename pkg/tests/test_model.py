import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from mixcl.model import (
    CKPT_MAGIC,
    ReferenceModel,
    greedy_decode,
    load_checkpoint,
    sample_decode,
    save_checkpoint,
    sequence_logprob,
)

from conftest import table_model, uniform_model

EOS = 3


def test_uniform_model_logprob():
    lp = sequence_logprob(uniform_model(4), [1, 2], [0, 1, 3])
    assert torch.allclose(lp, torch.full((3,), math.log(0.25), dtype=lp.dtype))


def test_sum_matches_brute_force_product():
    rng = np.random.default_rng(0)
    table = rng.dirichlet(np.ones(5), size=4)
    model = table_model(table, 5)
    target = [2, 4, 1]
    expected = math.log(table[0][2] * table[1][4] * table[2][1])
    assert float(sequence_logprob(model, [1], target).sum()) == pytest.approx(expected, rel=1e-12)


def test_empty_target_rejected():
    with pytest.raises(ValueError):
        sequence_logprob(uniform_model(4), [1], [])


def test_out_of_vocab_rejected():
    with pytest.raises(ValueError):
        sequence_logprob(uniform_model(4), [1], [7])


def test_greedy_immediate_eos():
    assert greedy_decode(table_model([[0.1, 0.1, 0.1, 0.7]], 4), [1], 10) == [EOS]


def test_greedy_tie_smallest_id():
    p = np.full(16, 0.01)
    p[7] = p[12] = 0.3
    p /= p.sum()
    out = greedy_decode(table_model([p, np.eye(16)[EOS]], 16), [1], 10)
    assert out == [7, EOS]


def test_greedy_cap():
    assert greedy_decode(table_model([[0.1, 0.6, 0.2, 0.1]], 4), [1], 5) == [1] * 5


def test_sampling_low_temperature_matches_greedy():
    rng = np.random.default_rng(0)
    table = rng.dirichlet(np.ones(6), size=5)
    table[-1] = np.eye(6)[EOS] * 0.9 + 0.1 / 6
    model = table_model(table, 6)
    assert sample_decode(model, [1], 10, temperature=1e-4, rng=1) == greedy_decode(model, [1], 10)


def test_sampling_seeded_and_one_hot():
    table = [np.eye(5)[4], np.eye(5)[2], np.eye(5)[EOS]]
    model = table_model(table, 5)
    assert sample_decode(model, [1], 10, 3.0, rng=0) == greedy_decode(model, [1], 10) == [4, 2, EOS]
    rng_model = table_model(np.random.default_rng(2).dirichlet(np.ones(5), size=6), 5)
    assert sample_decode(rng_model, [1], 8, 1.0, rng=9) == sample_decode(rng_model, [1], 8, 1.0, rng=9)


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        sample_decode(uniform_model(4), [1], 3, temperature=0.0)


def test_reference_model_size_and_determinism():
    m = ReferenceModel(2000)
    assert m.n_parameters <= 5_000_000
    small = ReferenceModel(20, d_model=8, encoder_layers=1, decoder_layers=1)
    assert small.n_parameters <= 5_000
    again = ReferenceModel(20, d_model=8, encoder_layers=1, decoder_layers=1)
    assert torch.equal(small.flat_parameters(), again.flat_parameters())
    assert greedy_decode(small, [5, 6, 7], 12) == greedy_decode(again, [5, 6, 7], 12)


@given(st.lists(st.integers(0, 19), min_size=1, max_size=10), st.lists(st.integers(4, 19), max_size=6))
def test_step_distribution_normalised(inp, prefix):
    m = _small()
    p = m.step_distribution(inp, prefix)
    assert p.shape == (20,)
    assert (p >= 0).all()
    assert abs(p.sum() - 1) <= 1e-6
    assert np.array_equal(p, m.step_distribution(inp, prefix))


_SMALL = []


def _small():
    if not _SMALL:
        _SMALL.append(ReferenceModel(20, d_model=8, encoder_layers=1, decoder_layers=1, seed=3))
    return _SMALL[0]


def test_checkpoint_roundtrip(tmp_path):
    m = _small()
    vocab = ["<pad>", "<unk>", "<s>", "</s>"] + [f"w{i}" for i in range(16)]
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, vocab, {"seed": 3})
    assert path.read_bytes().startswith((CKPT_MAGIC + "\n").encode())
    back, vocab_back, meta = load_checkpoint(path)
    assert vocab_back == vocab and meta == {"seed": 3}
    assert back.config == m.config
    assert torch.equal(back.flat_parameters(), m.flat_parameters().float())


def test_checkpoint_bad_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"nope\n")
    with pytest.raises(Exception):
        load_checkpoint(path)
