import io
import json
import math

import numpy as np
import pytest
import torch

from mixcl.corpus import build_index
from mixcl.data import parse_dialogue
from mixcl.errors import ConfigError, NumericalFailure
from mixcl.losses import LossWeightSchedule, batch_mle_losses, loss_weights
from mixcl.model import CallableModel, ReferenceModel
from mixcl.negatives import mine_negatives
from mixcl.synth import synthesize
from mixcl.training import (
    LOG_FIELDS,
    MixCLGenerator,
    TrainConfig,
    clip_grad_norm,
    fit_tokenizer,
    joint_step,
    make_optimizer,
    objective,
    prepare_batch,
    train,
)

SMALL = dict(d_model=16, encoder_layers=1, decoder_layers=1, batch_size=8, M=2, n_samples=2, pool=8)


@pytest.fixture(scope="module")
def toy():
    data = synthesize(n_entities=6, n_dialogues=40, test_fraction=0.2, seed=1)
    train_ex = [e for i, r in enumerate(data.train) for e in parse_dialogue(r, "train", i)]
    test_ex = [e for i, r in enumerate(data.test) for e in parse_dialogue(r, "test", i)]
    index = build_index(data.corpus)
    negs = mine_negatives(train_ex, index, M=2, seed=0)
    return data, train_ex, test_ex, index, negs


@pytest.mark.parametrize(
    "kw", [dict(learning_rate=0), dict(clip_norm=-1), dict(prob_floor=0.5), dict(beta_neg=2), dict(M=0), dict(alpha_init=(1, 1))]
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_config_defaults():
    c = TrainConfig()
    assert (c.learning_rate, c.clip_norm, c.epochs, c.batch_size, c.M, c.beta_neg, c.beta_span, c.prob_floor) == (
        2e-5, 0.1, 5, 16, 8, 0.5, 0.5, 1e-7
    )
    assert c.alpha_init == (0.4, 0.3, 0.3) and c.alpha_final == (0.5, 0.5, 0.0)


def _setup(toy, **kw):
    data, train_ex, _, index, negs = toy
    cfg = TrainConfig(**{**SMALL, **kw})
    tok = fit_tokenizer(train_ex, data.corpus, cfg.max_vocab)
    model = ReferenceModel(tok.vocab_size, d_model=16, encoder_layers=1, decoder_layers=1, seed=0)
    batch = prepare_batch(train_ex[:4], tok, cfg, negatives=negs, corpus=data.corpus)
    return cfg, tok, model, batch


def test_prepare_batch_shapes(toy):
    cfg, tok, model, batch = _setup(toy)
    assert batch.size == 4
    assert len(batch.mcl_targets) == len(batch.mcl_signs) == len(batch.mcl_owner) == 2 * len(batch.mcl_inputs)
    assert all(len(t) == len(s) and t[-1] == tok.eos_id for t, s in zip(batch.mcl_targets, batch.mcl_signs))
    assert len(batch.lm_inputs) == 4
    again = prepare_batch(toy[1][:4], tok, cfg, negatives=toy[4], corpus=toy[0].corpus)
    assert again == batch


def test_mle_only_weights_kept(toy):
    cfg, tok, model, batch = _setup(toy, mle_only=True)
    w = (0.4, 0.3, 0.3)
    J, terms = objective(model, batch, w, cfg)
    assert terms["L_MCL"] is None and terms["L_LM"] is None
    mle = float(batch_mle_losses(model, batch.mle_inputs, batch.mle_targets).mean().detach())
    assert float(J.detach()) == pytest.approx(0.4 * mle, rel=1e-6)


def test_full_objective_combines_terms(toy):
    cfg, tok, model, batch = _setup(toy)
    w = (0.45, 0.4, 0.15)
    J, t = objective(model, batch, w, cfg)
    assert float(J.detach()) == pytest.approx(0.45 * t["L_MLE"] + 0.4 * t["L_MCL"] + 0.15 * t["L_LM"], rel=1e-5)


def test_zero_weights_leave_parameters(toy):
    cfg, tok, model, batch = _setup(toy, alpha_init=(0, 0, 0), alpha_final=(0, 0, 0))
    before = model.flat_parameters()
    joint_step(model, make_optimizer(model, cfg), batch, 0, LossWeightSchedule((0, 0, 0), (0, 0, 0), 1), cfg)
    assert torch.equal(before, model.flat_parameters())


def test_clip_scales_norm_ten_by_a_hundredth():
    p = torch.nn.Parameter(torch.zeros(4))
    p.grad = torch.tensor([6.0, 8.0, 0.0, 0.0])
    pre = clip_grad_norm([p], 0.1)
    assert pre == pytest.approx(10.0)
    assert torch.allclose(p.grad, torch.tensor([0.06, 0.08, 0.0, 0.0]))
    small = torch.nn.Parameter(torch.zeros(2))
    small.grad = torch.tensor([0.03, 0.04])
    clip_grad_norm([small], 0.1)
    assert torch.equal(small.grad, torch.tensor([0.03, 0.04]))


def test_post_clip_norm_bound(toy):
    cfg, tok, model, batch = _setup(toy)
    J, _ = objective(model, batch, (0.4, 0.3, 0.3), cfg)
    J.backward()
    pre = clip_grad_norm(model.parameters(), 0.1)
    post = math.sqrt(sum(float((p.grad.double() ** 2).sum()) for p in model.parameters() if p.grad is not None))
    assert pre > 0.1
    assert post <= 0.1 + 1e-9


def test_non_finite_names_term(toy):
    cfg, tok, model, batch = _setup(toy, mle_only=True)
    with torch.no_grad():
        model.out_bias[0] = float("nan")
    with pytest.raises(NumericalFailure, match="L_MLE"):
        objective(model, batch, (0.4, 0.3, 0.3), cfg)


def test_train_log_records(toy):
    data, train_ex, _, index, negs = toy
    cfg = TrainConfig(**SMALL, epochs=1, learning_rate=1e-3)
    tok = fit_tokenizer(train_ex, data.corpus, cfg.max_vocab)
    model = ReferenceModel(tok.vocab_size, d_model=16, encoder_layers=1, decoder_layers=1)
    buf = io.StringIO()
    history = train(model, tok, train_ex, cfg, corpus=data.corpus, negatives=negs, index=index, log=buf)
    lines = [json.loads(l) for l in buf.getvalue().splitlines()]
    assert lines == history
    assert len(history) == math.ceil(len(train_ex) / 8)
    assert all(tuple(r) == LOG_FIELDS for r in history)
    sched = LossWeightSchedule(total_steps=len(history))
    assert (history[0]["alpha1"], history[0]["alpha2"], history[0]["alpha3"]) == loss_weights(0, sched)


def test_generator_deterministic_and_refreshes(toy):
    data, train_ex, test_ex, index, negs = toy
    cfg = TrainConfig(**SMALL, epochs=2, learning_rate=1e-3, seed=4)
    a = MixCLGenerator(cfg).fit(train_ex, corpus=data.corpus, negatives=negs, index=index)
    b = MixCLGenerator(cfg).fit(train_ex, corpus=data.corpus, negatives=negs, index=index)
    assert a.history_ == b.history_
    assert a.predict(test_ex) == b.predict(test_ex)
    assert len(a.predict_knowledge(test_ex[:2])) == 2
    assert a.get_params()["config"] is cfg


def test_random_negative_ablation_runs(toy):
    data, train_ex, _, _, _ = toy
    cfg = TrainConfig(**SMALL, epochs=1, random_negatives=True)
    gen = MixCLGenerator(cfg).fit(train_ex[:8], corpus=data.corpus)
    assert all(r["L_MCL"] is not None for r in gen.history_)


def test_validation_selects_best(toy):
    data, train_ex, test_ex, index, negs = toy
    cfg = TrainConfig(**SMALL, epochs=2, mle_only=True, learning_rate=1e-3)
    gen = MixCLGenerator(cfg).fit(train_ex, corpus=data.corpus, validation=test_ex[:4])
    assert len(gen.history_) == 2 * math.ceil(len(train_ex) / 8)
